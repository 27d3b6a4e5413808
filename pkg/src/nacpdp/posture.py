"""Device compliance evaluation and remediation.

A posture report is a map of check ids to observed values; a posture policy is
an ordered list of requirements (comparator + threshold + severity). The
verdict is Compliant only when every mandatory requirement passes; a device
with no report at all is Unknown, a status kept distinct from NonCompliant so
the decision table can treat "no agent" explicitly.

External vulnerability scan reports overlay the check-based verdict: a finding
at or above the critical threshold marks the device NonCompliant (synthetic
failed requirement "critical-vuln") until a newer clean scan arrives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from .model import DeviceDescriptor, canonical_mac

# Built-in checks and their value types. The set is deliberately small and
# extensible; evaluate_posture rejects reports with keys outside it.
BUILTIN_CHECKS: dict[str, type] = {
    "av_installed": bool,
    "av_signature_age_days": int,
    "patch_level": int,
    "firewall_enabled": bool,
    "forbidden_process_present": bool,
}

CRITICAL_VULN = "critical-vuln"

DEFAULT_CRITICAL_THRESHOLD = 7.0


class PostureStatus(str, Enum):
    COMPLIANT = "Compliant"
    NON_COMPLIANT = "NonCompliant"
    UNKNOWN = "Unknown"


class PostureError(ValueError):
    """Malformed report, policy or scan document."""


@dataclass(frozen=True)
class PostureReport:
    device: DeviceDescriptor
    checks: dict
    collected_at: int

    def __post_init__(self):
        for check_id, value in self.checks.items():
            expected = BUILTIN_CHECKS.get(check_id)
            if expected is None:
                raise PostureError(f"unknown check_id: {check_id!r}")
            if expected is bool:
                if not isinstance(value, bool):
                    raise PostureError(f"check {check_id} expects a bool, got {value!r}")
            elif not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise PostureError(f"check {check_id} expects a non-negative int, got {value!r}")

    def with_check(self, check_id: str, value) -> "PostureReport":
        checks = dict(self.checks)
        checks[check_id] = value
        return PostureReport(device=self.device, checks=checks, collected_at=self.collected_at)

    def to_json(self) -> dict:
        return {
            "device": self.device.to_json(),
            "checks": dict(self.checks),
            "collected_at": self.collected_at,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PostureReport":
        return cls(
            device=DeviceDescriptor.from_json(doc["device"]),
            checks=dict(doc["checks"]),
            collected_at=int(doc["collected_at"]),
        )


@dataclass(frozen=True)
class Requirement:
    req_id: str
    check_id: str
    comparator: str  # one of =, <=, >=
    threshold: object
    severity: str  # mandatory | advisory
    instruction: str = ""

    def __post_init__(self):
        if self.comparator not in ("=", "<=", ">="):
            raise PostureError(f"bad comparator {self.comparator!r} in {self.req_id}")
        if self.severity not in ("mandatory", "advisory"):
            raise PostureError(f"bad severity {self.severity!r} in {self.req_id}")
        if self.check_id not in BUILTIN_CHECKS:
            raise PostureError(f"requirement {self.req_id} references unknown check {self.check_id!r}")

    def satisfied_by(self, value) -> bool:
        if self.comparator == "=":
            return value == self.threshold
        if self.comparator == "<=":
            return value <= self.threshold
        return value >= self.threshold

    def satisfying_value(self):
        """Value a simulated fix writes into the stored report."""
        return self.threshold

    def to_json(self) -> dict:
        return {
            "id": self.req_id,
            "check": self.check_id,
            "op": self.comparator,
            "threshold": self.threshold,
            "severity": self.severity,
            "instruction": self.instruction,
        }


@dataclass(frozen=True)
class PosturePolicy:
    requirements: tuple[Requirement, ...]
    critical_threshold: float = DEFAULT_CRITICAL_THRESHOLD

    def __post_init__(self):
        seen: set[tuple[str, str]] = set()
        for req in self.requirements:
            key = (req.check_id, req.severity)
            if key in seen:
                raise PostureError(f"duplicate check {req.check_id} at severity {req.severity}")
            seen.add(key)
        if not self.requirements:
            raise PostureError("posture policy must not be empty")

    def requirement(self, req_id: str) -> Optional[Requirement]:
        for req in self.requirements:
            if req.req_id == req_id:
                return req
        return None

    def to_json(self) -> dict:
        return {
            "requirements": [r.to_json() for r in self.requirements],
            "critical_threshold": self.critical_threshold,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PosturePolicy":
        reqs = []
        for entry in doc["requirements"]:
            reqs.append(
                Requirement(
                    req_id=entry["id"],
                    check_id=entry["check"],
                    comparator=entry["op"],
                    threshold=entry["threshold"],
                    severity=entry["severity"],
                    instruction=entry.get("instruction", ""),
                )
            )
        return cls(
            requirements=tuple(reqs),
            critical_threshold=float(doc.get("critical_threshold", DEFAULT_CRITICAL_THRESHOLD)),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PosturePolicy":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RemediationItem:
    check_id: str
    instruction: str
    req_id: str

    def to_json(self) -> dict:
        return {"check_id": self.check_id, "instruction": self.instruction, "req_id": self.req_id}


@dataclass(frozen=True)
class PostureVerdict:
    status: PostureStatus
    failed: tuple[str, ...]  # requirement ids, mandatory failures first in policy order
    advisory_failed: tuple[str, ...]
    remediation: tuple[RemediationItem, ...]

    @property
    def compliant(self) -> bool:
        return self.status == PostureStatus.COMPLIANT

    def to_json(self) -> dict:
        return {
            "status": self.status.value,
            "failed": list(self.failed),
            "advisory_failed": list(self.advisory_failed),
            "remediation": [item.to_json() for item in self.remediation],
        }


@dataclass(frozen=True)
class ScanFinding:
    vuln_id: str
    severity: float

    def __post_init__(self):
        if not 0.0 <= float(self.severity) <= 10.0:
            raise PostureError(f"scan severity out of range [0,10]: {self.severity}")


@dataclass(frozen=True)
class ScanReport:
    mac: str
    findings: tuple[ScanFinding, ...]
    scanned_at: int

    def __post_init__(self):
        object.__setattr__(self, "mac", canonical_mac(self.mac))

    @classmethod
    def from_json(cls, doc: dict) -> "ScanReport":
        findings = tuple(
            ScanFinding(vuln_id=f["vuln_id"], severity=float(f["severity"]))
            for f in doc.get("findings", [])
        )
        return cls(mac=doc["mac"], findings=findings, scanned_at=int(doc["scanned_at"]))


def evaluate_posture(report: Optional[PostureReport], policy: PosturePolicy) -> PostureVerdict:
    """Score a report against the policy.

    Deterministic and insensitive to the report's map iteration order: failures
    are listed in policy order. A requirement whose check is absent from the
    report fails (fail closed). Absent report -> Unknown.
    """
    if report is None:
        return PostureVerdict(
            status=PostureStatus.UNKNOWN, failed=(), advisory_failed=(), remediation=()
        )
    failed: list[str] = []
    advisory: list[str] = []
    remediation: list[RemediationItem] = []
    for req in policy.requirements:
        value = report.checks.get(req.check_id)
        ok = value is not None and req.satisfied_by(value)
        if ok:
            continue
        if req.severity == "mandatory":
            failed.append(req.req_id)
            remediation.append(
                RemediationItem(
                    check_id=req.check_id,
                    instruction=req.instruction or f"bring {req.check_id} {req.comparator} {req.threshold}",
                    req_id=req.req_id,
                )
            )
        else:
            advisory.append(req.req_id)
    status = PostureStatus.COMPLIANT if not failed else PostureStatus.NON_COMPLIANT
    return PostureVerdict(
        status=status,
        failed=tuple(failed),
        advisory_failed=tuple(advisory),
        remediation=tuple(remediation),
    )


@dataclass
class _DeviceState:
    report: Optional[PostureReport] = None
    critical_flag: bool = False
    flag_scanned_at: int = -1
    flag_vulns: tuple[str, ...] = ()


class PostureStore:
    """Stored posture state per device: latest report plus scan-derived flags.

    Single-writer semantics are enforced by the decision engine, which funnels
    all mutations through its ordered queue; reads return immutable values.
    """

    def __init__(self):
        self._devices: dict[str, _DeviceState] = {}

    def _state(self, mac: str) -> _DeviceState:
        mac = canonical_mac(mac)
        if mac not in self._devices:
            self._devices[mac] = _DeviceState()
        return self._devices[mac]

    def stored_report(self, mac: str) -> Optional[PostureReport]:
        state = self._devices.get(canonical_mac(mac))
        return state.report if state else None

    def store_report(self, report: PostureReport) -> None:
        self._state(report.device.mac).report = report

    def ingest_scan_report(self, scan: ScanReport, policy: PosturePolicy) -> dict:
        """Apply a vulnerability scan. Returns a delta summary.

        Findings at or above the policy's critical threshold flag the device;
        a newer scan with no critical findings clears the flag. Scans older
        than the last applied one are ignored.
        """
        state = self._state(scan.mac)
        if scan.scanned_at < state.flag_scanned_at:
            return {"mac": scan.mac, "changed": False, "flagged": state.critical_flag, "stale": True}
        critical = tuple(
            f.vuln_id for f in scan.findings if f.severity >= policy.critical_threshold
        )
        changed = bool(critical) != state.critical_flag or set(critical) != set(state.flag_vulns)
        state.critical_flag = bool(critical)
        state.flag_vulns = critical
        state.flag_scanned_at = scan.scanned_at
        return {"mac": scan.mac, "changed": changed, "flagged": state.critical_flag,
                "vulns": list(critical)}

    def apply_remediation(self, mac: str, check_id: str, policy: PosturePolicy) -> dict:
        """Simulated fix: set the stored report's failing check to the
        policy-satisfying value. Requires a stored report with that check
        currently failing a mandatory requirement."""
        mac = canonical_mac(mac)
        state = self._devices.get(mac)
        if state is None or state.report is None:
            raise PostureError(f"no stored posture report for {mac}")
        verdict = evaluate_posture(state.report, policy)
        failing = {policy.requirement(req_id).check_id: req_id for req_id in verdict.failed}
        if check_id not in failing:
            return {"mac": mac, "check_id": check_id, "applied": False, "reason": "not-failing"}
        req = policy.requirement(failing[check_id])
        state.report = state.report.with_check(check_id, req.satisfying_value())
        return {"mac": mac, "check_id": check_id, "applied": True}

    def device_state_json(self, mac: str) -> dict:
        """Stable JSON view of a device's stored posture state, for digests."""
        state = self._devices.get(canonical_mac(mac))
        if state is None:
            return {"report": None, "critical_flag": False, "flag_vulns": [],
                    "flag_scanned_at": -1}
        return {
            "report": state.report.to_json() if state.report else None,
            "critical_flag": state.critical_flag,
            "flag_vulns": list(state.flag_vulns),
            "flag_scanned_at": state.flag_scanned_at,
        }

    def restore(self, mac: str, doc: dict) -> None:
        """Reinstate a device's posture state from an audit record."""
        state = self._state(mac)
        state.report = PostureReport.from_json(doc["report"]) if doc.get("report") else None
        state.critical_flag = bool(doc.get("critical_flag", False))
        state.flag_vulns = tuple(doc.get("flag_vulns", ()))
        state.flag_scanned_at = int(doc.get("flag_scanned_at", -1))

    def verdict_for(self, mac: str, policy: PosturePolicy) -> PostureVerdict:
        """Effective verdict: check-based evaluation with the scan flag
        overlaid. A flagged device is NonCompliant even when every check
        passes, but a device with no report stays Unknown."""
        mac = canonical_mac(mac)
        state = self._devices.get(mac)
        report = state.report if state else None
        verdict = evaluate_posture(report, policy)
        if state and state.critical_flag and verdict.status != PostureStatus.UNKNOWN:
            failed = verdict.failed + (CRITICAL_VULN,)
            remediation = verdict.remediation + (
                RemediationItem(
                    check_id=CRITICAL_VULN,
                    instruction="resolve critical vulnerabilities: " + ", ".join(state.flag_vulns),
                    req_id=CRITICAL_VULN,
                ),
            )
            verdict = PostureVerdict(
                status=PostureStatus.NON_COMPLIANT,
                failed=failed,
                advisory_failed=verdict.advisory_failed,
                remediation=remediation,
            )
        return verdict
