"""The policy decision point.

Combines identity, posture and location into an access decision, owns the
session lifecycle state machine, and re-evaluates standing sessions when
posture, policy or threat events arrive. All mutations are serialized behind
one lock (the in-process equivalent of a single ordered event queue), each
state transition is audited exactly once, and the audit stream alone is enough
to rebuild the session table.

Decision order is fixed: identity first, then posture, then role-to-VLAN
mapping. Unknown users on non-allowlisted devices land in the registration
portal; authentication failures for known users are denied outright;
non-compliant or unassessed devices are quarantined for remediation.
"""

from __future__ import annotations

import hashlib
import ipaddress
import itertools
import json
import threading
from dataclasses import dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

from .audit import AuditLog
from .clock import Clock
from .enforce import CommandIssuer, EnforcementCommand
from .envelope import EnvelopeFactory, EventEnvelope
from .firewall import FirewallRule, ResolverSnapshot, RuleSet, SessionFacts, update_resolution
from .identity import (
    Authenticated,
    Credential,
    Directory,
    DirectoryRecord,
    Failed,
    FailReason,
    GuestRegistration,
    authenticate,
    profile_device,
)
from .model import DeviceDescriptor, IdentityKind, ModelError, NetworkLocation, UserIdentity
from .posture import (
    PosturePolicy,
    PostureReport,
    PostureStatus,
    PostureStore,
    ScanReport,
)
from .threat import (
    DEFAULT_DEDUP_WINDOW_MS,
    CtcAction,
    CtcActionKind,
    ThreatEvent,
    ThreatPolicy,
    correlate,
    match_clause,
)

AUDIT_SOURCE = "nac-posture"
SENSOR_SOURCE = "application"


class ConfigurationError(RuntimeError):
    """Policy configuration is incomplete (e.g. a granted role has no VLAN)."""


class UnknownSessionError(KeyError):
    pass


class InvalidTransitionError(RuntimeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


# ---------------------------------------------------------------------------
# NAC policy: role -> VLAN / ruleset mapping plus the isolation VLANs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NacPolicy:
    role_vlans: dict
    quarantine_vlan: int
    registration_vlan: int
    firewall_id: str = "fw"
    ip_pool: str = "10.99.0.0/16"

    def __post_init__(self):
        isolation = {self.quarantine_vlan, self.registration_vlan}
        clash = isolation & set(self.role_vlans.values())
        if clash:
            raise ConfigurationError(
                f"isolation VLANs must differ from every role VLAN (clash: {sorted(clash)})"
            )
        ipaddress.ip_network(self.ip_pool)

    def vlan_for(self, role: str) -> int:
        try:
            return self.role_vlans[role]
        except KeyError:
            raise ConfigurationError(f"no VLAN mapping for role {role!r}") from None

    def ruleset_for(self, role: str) -> str:
        return f"role:{role}"

    def to_json(self) -> dict:
        return {
            "role_vlans": dict(self.role_vlans),
            "quarantine_vlan": self.quarantine_vlan,
            "registration_vlan": self.registration_vlan,
            "firewall_id": self.firewall_id,
            "ip_pool": self.ip_pool,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NacPolicy":
        return cls(
            role_vlans={role: int(v) for role, v in doc["role_vlans"].items()},
            quarantine_vlan=int(doc["quarantine_vlan"]),
            registration_vlan=int(doc["registration_vlan"]),
            firewall_id=doc.get("firewall_id", "fw"),
            ip_pool=doc.get("ip_pool", "10.99.0.0/16"),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NacPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Access request / decision
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AccessRequest:
    cred: Credential
    device: DeviceDescriptor
    location: NetworkLocation
    posture: Optional[PostureReport]
    requested_at: int

    def __post_init__(self):
        if self.posture is not None and self.posture.device.mac != self.device.mac:
            raise ModelError(
                f"posture report is for {self.posture.device.mac}, request device is {self.device.mac}"
            )

    def sanitized_json(self) -> dict:
        """Request as recorded in the audit log: the secret is replaced by its
        hash so credentials never persist in clear."""
        cred = {"method": self.cred.method.value, "principal": self.cred.principal}
        if self.cred.secret is not None:
            cred["secret_sha256"] = hashlib.sha256(self.cred.secret.encode()).hexdigest()
        return {
            "cred": cred,
            "device": self.device.to_json(),
            "location": self.location.to_json(),
            "posture": self.posture.to_json() if self.posture else None,
            "requested_at": self.requested_at,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AccessRequest":
        posture = doc.get("posture")
        return cls(
            cred=Credential.from_json(doc["cred"]),
            device=DeviceDescriptor.from_json(doc["device"]),
            location=NetworkLocation.from_json(doc["location"]),
            posture=PostureReport.from_json(posture) if posture else None,
            requested_at=int(doc["requested_at"]),
        )


class VerdictKind(str, Enum):
    GRANT = "Grant"
    QUARANTINE = "Quarantine"
    DENY = "Deny"


class Portal(str, Enum):
    REGISTRATION = "registration"
    REMEDIATION = "remediation"


@dataclass(frozen=True)
class PolicyDecision:
    verdict: VerdictKind
    decided_at: int
    inputs_digest: str
    identity: Optional[UserIdentity] = None
    role: Optional[str] = None
    vlan_id: Optional[int] = None
    ruleset_ref: Optional[str] = None
    portal: Optional[Portal] = None
    reason: Optional[str] = None
    posture_status: Optional[str] = None
    remediation: tuple = ()

    def __post_init__(self):
        if self.verdict == VerdictKind.GRANT:
            assert self.identity is not None and self.role in self.identity.roles

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "decided_at": self.decided_at,
            "inputs_digest": self.inputs_digest,
            "identity": self.identity.to_json() if self.identity else None,
            "role": self.role,
            "vlan_id": self.vlan_id,
            "ruleset_ref": self.ruleset_ref,
            "portal": self.portal.value if self.portal else None,
            "reason": self.reason,
            "posture_status": self.posture_status,
            "remediation": [item.to_json() for item in self.remediation],
        }


def _unregistered_identity(mac: str) -> UserIdentity:
    return UserIdentity(
        user_id=f"unregistered:{mac}",
        display_name="unregistered device",
        roles=(),
        kind=IdentityKind.DEVICE_PROFILE,
    )


def decide_access(
    req: AccessRequest,
    *,
    directory: Directory,
    allowlist: dict,
    posture_policy: PosturePolicy,
    nac_policy: NacPolicy,
    posture_store: PostureStore,
    clock: Clock,
) -> PolicyDecision:
    """Apply the decision table to a fresh access request.

    Pure in its inputs: the same request against the same directory, policies
    and stored posture always yields the same verdict. Any posture report
    carried by the request must already be in the store.
    """
    now = clock.now_ms()
    posture_verdict = posture_store.verdict_for(req.device.mac, posture_policy)
    inputs_digest = digest_of(
        {
            "request": req.sanitized_json(),
            "posture_state": posture_store.device_state_json(req.device.mac),
            "directory": directory.digest(),
            "allowlist": sorted(allowlist.items()),
            "posture_policy": posture_policy.to_json(),
            "nac_policy": nac_policy.to_json(),
        }
    )

    def grant(identity: UserIdentity, status: Optional[str]) -> PolicyDecision:
        role = identity.primary_role
        return PolicyDecision(
            verdict=VerdictKind.GRANT,
            decided_at=now,
            inputs_digest=inputs_digest,
            identity=identity,
            role=role,
            vlan_id=nac_policy.vlan_for(role),
            ruleset_ref=nac_policy.ruleset_for(role),
            posture_status=status,
        )

    auth = authenticate(req.cred, directory, clock)
    if isinstance(auth, Failed):
        if auth.reason != FailReason.UNKNOWN_USER:
            return PolicyDecision(
                verdict=VerdictKind.DENY,
                decided_at=now,
                inputs_digest=inputs_digest,
                reason=auth.reason.value,
            )
        profile = profile_device(req.device.mac, allowlist)
        if isinstance(profile, Authenticated):
            # Non-authenticating devices carry no agent, so Unknown posture is
            # normal and does not gate them; an explicit NonCompliant verdict
            # (failing checks or a critical scan finding) still quarantines.
            if posture_verdict.status == PostureStatus.NON_COMPLIANT:
                return PolicyDecision(
                    verdict=VerdictKind.QUARANTINE,
                    decided_at=now,
                    inputs_digest=inputs_digest,
                    identity=profile.identity,
                    vlan_id=nac_policy.quarantine_vlan,
                    portal=Portal.REMEDIATION,
                    reason="posture-NonCompliant",
                    posture_status=posture_verdict.status.value,
                    remediation=posture_verdict.remediation,
                )
            return grant(profile.identity, posture_verdict.status.value)
        return PolicyDecision(
            verdict=VerdictKind.QUARANTINE,
            decided_at=now,
            inputs_digest=inputs_digest,
            identity=_unregistered_identity(req.device.mac),
            vlan_id=nac_policy.registration_vlan,
            portal=Portal.REGISTRATION,
            reason="unknown-user",
        )

    identity = auth.identity
    if posture_verdict.compliant:
        return grant(identity, posture_verdict.status.value)
    return PolicyDecision(
        verdict=VerdictKind.QUARANTINE,
        decided_at=now,
        inputs_digest=inputs_digest,
        identity=identity,
        vlan_id=nac_policy.quarantine_vlan,
        portal=Portal.REMEDIATION,
        reason=f"posture-{posture_verdict.status.value}",
        posture_status=posture_verdict.status.value,
        remediation=posture_verdict.remediation,
    )


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------


class SessionState(str, Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    QUARANTINED = "Quarantined"
    DISABLED = "Disabled"
    TERMINATED = "Terminated"


ALLOWED_TRANSITIONS = frozenset(
    {
        (SessionState.PENDING, SessionState.ACTIVE),
        (SessionState.PENDING, SessionState.QUARANTINED),
        (SessionState.PENDING, SessionState.TERMINATED),
        (SessionState.ACTIVE, SessionState.QUARANTINED),
        (SessionState.QUARANTINED, SessionState.ACTIVE),
        (SessionState.ACTIVE, SessionState.DISABLED),
        (SessionState.ACTIVE, SessionState.TERMINATED),
        (SessionState.QUARANTINED, SessionState.DISABLED),
        (SessionState.QUARANTINED, SessionState.TERMINATED),
        (SessionState.DISABLED, SessionState.PENDING),
        (SessionState.DISABLED, SessionState.TERMINATED),
    }
)

# Admin actions legal per state; the ops console must offer exactly these.
ADMIN_ACTIONS = {
    SessionState.PENDING: ("terminate",),
    SessionState.ACTIVE: ("terminate", "disable"),
    SessionState.QUARANTINED: ("terminate", "disable"),
    SessionState.DISABLED: ("reenable", "terminate"),
    SessionState.TERMINATED: (),
}


@dataclass
class TransitionRecord:
    seq: int  # audit envelope seq that recorded this transition
    at: int
    from_state: str
    to_state: str
    reason: str
    trigger: str

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "at": self.at,
            "from": self.from_state,
            "to": self.to_state,
            "reason": self.reason,
            "trigger": self.trigger,
        }


@dataclass
class Session:
    session_id: str
    user: UserIdentity
    device: DeviceDescriptor
    location: NetworkLocation
    ip: str
    opened_at: int
    state: SessionState = SessionState.PENDING
    role: Optional[str] = None
    vlan: Optional[int] = None
    ruleset_ref: Optional[str] = None
    portal: Optional[str] = None
    rate_limit_kbps: Optional[int] = None
    denied_applications: tuple = ()
    last_reason: str = "opened"
    history: list = dc_field(default_factory=list)

    @property
    def is_live(self) -> bool:
        return self.state != SessionState.TERMINATED

    @property
    def dup_key(self) -> tuple:
        return (self.user.user_id, self.device.mac, self.location.attachment)

    def facts(self) -> SessionFacts:
        return SessionFacts(
            user_id=self.user.user_id,
            roles=self.user.roles,
            device_class=self.device.device_class,
        )

    def available_actions(self) -> tuple:
        return ADMIN_ACTIONS[self.state]

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "user": self.user.to_json(),
            "device": self.device.to_json(),
            "location": self.location.to_json(),
            "ip": self.ip,
            "opened_at": self.opened_at,
            "state": self.state.value,
            "role": self.role,
            "vlan": self.vlan,
            "ruleset_ref": self.ruleset_ref,
            "portal": self.portal,
            "rate_limit_kbps": self.rate_limit_kbps,
            "denied_applications": list(self.denied_applications),
            "last_reason": self.last_reason,
            "history": [t.to_json() for t in self.history],
        }


# ---------------------------------------------------------------------------
# Re-evaluation of standing sessions
# ---------------------------------------------------------------------------


def reevaluate_decision(
    session: Session,
    *,
    directory: Directory,
    allowlist: dict,
    posture_policy: PosturePolicy,
    nac_policy: NacPolicy,
    posture_store: PostureStore,
    clock: Clock,
) -> PolicyDecision:
    """Recompute the verdict for a standing session from current stored state.

    Identity is revalidated without a secret: the directory record (or guest
    entry, or allowlist entry) must still exist, be enabled and be unexpired.
    """
    now = clock.now_ms()
    mac = session.device.mac
    posture_verdict = posture_store.verdict_for(mac, posture_policy)
    inputs_digest = digest_of(
        {
            "session": {"user": session.user.to_json(), "device": session.device.to_json()},
            "posture_state": posture_store.device_state_json(mac),
            "directory": directory.digest(),
            "allowlist": sorted(allowlist.items()),
            "posture_policy": posture_policy.to_json(),
            "nac_policy": nac_policy.to_json(),
        }
    )

    def deny(reason: str) -> PolicyDecision:
        return PolicyDecision(
            verdict=VerdictKind.DENY, decided_at=now, inputs_digest=inputs_digest, reason=reason
        )

    def grant(identity: UserIdentity, status: Optional[str]) -> PolicyDecision:
        role = identity.primary_role
        return PolicyDecision(
            verdict=VerdictKind.GRANT,
            decided_at=now,
            inputs_digest=inputs_digest,
            identity=identity,
            role=role,
            vlan_id=nac_policy.vlan_for(role),
            ruleset_ref=nac_policy.ruleset_for(role),
            posture_status=status,
        )

    def quarantine(identity: UserIdentity, portal: Portal, reason: str, verdict=None) -> PolicyDecision:
        return PolicyDecision(
            verdict=VerdictKind.QUARANTINE,
            decided_at=now,
            inputs_digest=inputs_digest,
            identity=identity,
            vlan_id=nac_policy.registration_vlan
            if portal == Portal.REGISTRATION
            else nac_policy.quarantine_vlan,
            portal=portal,
            reason=reason,
            posture_status=verdict.status.value if verdict else None,
            remediation=verdict.remediation if verdict else (),
        )

    user_id = session.user.user_id
    if user_id.startswith("unregistered:"):
        profile = profile_device(mac, allowlist)
        if isinstance(profile, Authenticated):
            return grant(profile.identity, None)
        return quarantine(session.user, Portal.REGISTRATION, "unknown-user")

    if session.user.kind == IdentityKind.DEVICE_PROFILE:
        profile = profile_device(mac, allowlist)
        if not isinstance(profile, Authenticated):
            return deny("unknown-user")
        if posture_verdict.status == PostureStatus.NON_COMPLIANT:
            return quarantine(
                profile.identity,
                Portal.REMEDIATION,
                "posture-NonCompliant",
                posture_verdict,
            )
        return grant(profile.identity, posture_verdict.status.value)

    guest = directory.guest_entry(user_id)
    if guest is not None:
        if clock.now_ms() >= guest.registration.expiry_ms:
            return deny(FailReason.EXPIRED.value)
        identity = guest.record.identity()
    else:
        record = directory.lookup(user_id)
        if record is None:
            return deny(FailReason.UNKNOWN_USER.value)
        if not record.enabled:
            return deny(FailReason.DISABLED.value)
        identity = record.identity()

    if posture_verdict.compliant:
        return grant(identity, posture_verdict.status.value)
    return quarantine(
        identity, Portal.REMEDIATION, f"posture-{posture_verdict.status.value}", posture_verdict
    )


# ---------------------------------------------------------------------------
# The engine
# ---------------------------------------------------------------------------


class PdpEngine:
    """Single-writer decision engine.

    Every mutating entry point takes the engine lock, applies the change,
    and appends audit envelopes (source "nac-posture", consecutive seq).
    Enforcement is emitted as commands through the issuer; the session table
    can be rebuilt from the audit stream alone.
    """

    def __init__(
        self,
        *,
        directory: Directory,
        allowlist: Optional[dict] = None,
        posture_policy: PosturePolicy,
        nac_policy: NacPolicy,
        firewall_rules: Optional[RuleSet] = None,
        resolver: Optional[ResolverSnapshot] = None,
        threat_policy: Optional[ThreatPolicy] = None,
        clock: Clock,
        audit: Optional[AuditLog] = None,
        command_sink=None,
        address_plan: Optional[dict] = None,
        dedup_window_ms: int = DEFAULT_DEDUP_WINDOW_MS,
        default_fw_action: str = "deny",
    ):
        self.directory = directory
        self.allowlist = dict(allowlist or {})
        self.posture_policy = posture_policy
        self.nac_policy = nac_policy
        self.firewall_rules = firewall_rules if firewall_rules is not None else RuleSet(rules=())
        self.resolver = resolver if resolver is not None else ResolverSnapshot()
        self.threat_policy = threat_policy if threat_policy is not None else ThreatPolicy(clauses=())
        self.clock = clock
        self.audit = audit if audit is not None else AuditLog()
        self.posture_store = PostureStore()
        self.commands = CommandIssuer(sink=command_sink)
        self.envelopes = EnvelopeFactory(clock)
        self.default_fw_action = default_fw_action
        self.dedup_window_ms = dedup_window_ms
        self.address_plan = dict(address_plan or {})  # (switch, port) -> ip

        self._sessions: dict[str, Session] = {}
        self._dynamic_rulesets: dict[str, RuleSet] = {}
        self._session_counter = itertools.count(1)
        self._seen_alerts: set[str] = set()
        self._lock = threading.RLock()

    # -- views ---------------------------------------------------------

    def sessions(self) -> list[Session]:
        with self._lock:
            return list(self._sessions.values())

    def session(self, session_id: str) -> Session:
        with self._lock:
            try:
                return self._sessions[session_id]
            except KeyError:
                raise UnknownSessionError(session_id) from None

    def live_sessions(self) -> list[Session]:
        with self._lock:
            return [s for s in self._sessions.values() if s.is_live]

    def session_facts(self) -> dict:
        """session_id -> SessionFacts for the firewall evaluator."""
        with self._lock:
            return {s.session_id: s.facts() for s in self._sessions.values() if s.is_live}

    def session_by_ip(self, ip: str) -> Optional[Session]:
        with self._lock:
            live = [s for s in self._sessions.values() if s.is_live and s.ip == ip]
            return live[0] if live else None

    def state_digest(self) -> str:
        """Canonical hash of the session table, including histories."""
        with self._lock:
            table = {sid: s.to_json() for sid, s in sorted(self._sessions.items())}
            return digest_of(table)

    def remediation_items(self, session_id: str) -> tuple:
        """Current remediation items for a session's device (captive-portal
        view): what the posture verdict demands right now."""
        with self._lock:
            session = self.session(session_id)
            verdict = self.posture_store.verdict_for(session.device.mac, self.posture_policy)
            return verdict.remediation

    def resolve_ruleset(self, ref: str) -> RuleSet:
        with self._lock:
            return self._rulesets_view().get(ref, self.firewall_rules)

    def _rulesets_view(self) -> dict:
        view = {"main": self.firewall_rules}
        view.update(self._dynamic_rulesets)
        return view

    # -- audit plumbing --------------------------------------------------

    def _audit(self, kind: str, payload: dict) -> EventEnvelope:
        env = self.envelopes.next_envelope(AUDIT_SOURCE, kind, payload)
        self.audit.append(env)
        return env

    # -- decisions and session lifecycle ---------------------------------

    def register_guest(self, reg: GuestRegistration):
        with self._lock:
            identity, credential = self.directory.register_guest(reg, self.clock)
            entry = self.directory.guest_entry(identity.user_id)
            self._audit(
                "guest-registered",
                {
                    "user_id": identity.user_id,
                    "record": entry.record.to_json(),
                    "registration": reg.to_json(),
                },
            )
            return identity, credential

    def handle_access_request(self, req: AccessRequest):
        """Store any carried posture report, decide, and open the session for
        Grant/Quarantine verdicts. Returns (decision, session | None)."""
        with self._lock:
            if req.posture is not None:
                self.posture_store.store_report(req.posture)
            decision = decide_access(
                req,
                directory=self.directory,
                allowlist=self.allowlist,
                posture_policy=self.posture_policy,
                nac_policy=self.nac_policy,
                posture_store=self.posture_store,
                clock=self.clock,
            )
            session = None
            superseded: list[str] = []
            if decision.verdict != VerdictKind.DENY:
                session, superseded = self._open_session(decision, req)
            self._audit(
                "access-decision",
                {
                    "request": req.sanitized_json(),
                    "decision": decision.to_json(),
                    "session_id": session.session_id if session else None,
                    "superseded": superseded,
                },
            )
            if req.posture is not None:
                # The carried report is device state: any other session of the
                # same endpoint must be re-evaluated under it.
                for other in list(self._sessions.values()):
                    if (
                        other.is_live
                        and other.device.mac == req.device.mac
                        and (session is None or other.session_id != session.session_id)
                        and other.state != SessionState.DISABLED
                    ):
                        self.reevaluate(other.session_id, trigger="posture-change")
            return decision, session

    def open_session(self, decision: PolicyDecision, req: AccessRequest) -> Session:
        """Create and activate a session for a Grant/Quarantine decision."""
        with self._lock:
            if decision.verdict == VerdictKind.DENY:
                raise InvalidTransitionError("cannot open a session for a Deny decision")
            session, _ = self._open_session(decision, req)
            return session

    def _assign_ip(self, location: NetworkLocation) -> str:
        planned = self.address_plan.get(location.command_target)
        if planned is not None:
            return planned
        in_use = {s.ip for s in self._sessions.values() if s.is_live}
        in_use |= set(self.address_plan.values())
        for host in ipaddress.ip_network(self.nac_policy.ip_pool).hosts():
            ip = str(host)
            if ip not in in_use:
                return ip
        raise ConfigurationError("address pool exhausted")

    def _open_session(self, decision: PolicyDecision, req: AccessRequest):
        assert decision.identity is not None
        ip = self._assign_ip(req.location)
        dup_key = (decision.identity.user_id, req.device.mac, req.location.attachment)
        device_key = (req.device.mac, req.location.attachment)
        superseded = []
        for old in list(self._sessions.values()):
            if not old.is_live:
                continue
            # Newest wins: same user+device+attachment (the duplicate rule),
            # the same endpoint re-admitted at its port, or an address clash.
            if (
                old.dup_key == dup_key
                or (old.device.mac, old.location.attachment) == device_key
                or old.ip == ip
            ):
                self._transition(old, SessionState.TERMINATED, reason="superseded",
                                 trigger="admission")
                superseded.append(old.session_id)

        session = Session(
            session_id=f"s-{next(self._session_counter):04d}",
            user=decision.identity,
            device=req.device,
            location=req.location,
            ip=ip,
            opened_at=self.clock.now_ms(),
        )
        self._sessions[session.session_id] = session
        self._audit(
            "session-open",
            {
                "session_id": session.session_id,
                "user": session.user.to_json(),
                "device": session.device.to_json(),
                "location": session.location.to_json(),
                "ip": session.ip,
                "opened_at": session.opened_at,
            },
        )
        if decision.verdict == VerdictKind.GRANT:
            self._transition(
                session,
                SessionState.ACTIVE,
                reason="granted",
                trigger="admission",
                role=decision.role,
                vlan=decision.vlan_id,
                ruleset_ref=decision.ruleset_ref,
            )
        else:
            self._transition(
                session,
                SessionState.QUARANTINED,
                reason=decision.reason or "quarantined",
                trigger="admission",
                vlan=decision.vlan_id,
                portal=decision.portal.value if decision.portal else None,
            )
        return session, superseded

    # -- transitions ------------------------------------------------------

    def _enforcement_for(self, session: Session, to_state: SessionState,
                         vlan: Optional[int], ruleset_ref: Optional[str]) -> list[EnforcementCommand]:
        switch, port = session.location.command_target
        fw = self.nac_policy.firewall_id
        cmds: list[EnforcementCommand] = []
        old_ref = session.ruleset_ref
        if to_state in (SessionState.TERMINATED, SessionState.DISABLED):
            cmds.append(self.commands.set_port_vlan(switch, port, self.nac_policy.quarantine_vlan))
            if old_ref:
                cmds.append(self.commands.remove_ruleset(fw, old_ref))
        elif to_state == SessionState.ACTIVE:
            cmds.append(self.commands.set_port_vlan(switch, port, vlan))
            if old_ref and old_ref != ruleset_ref:
                cmds.append(self.commands.remove_ruleset(fw, old_ref))
            if ruleset_ref and old_ref != ruleset_ref:
                cmds.append(self.commands.install_ruleset(fw, ruleset_ref))
        elif to_state == SessionState.QUARANTINED:
            cmds.append(self.commands.set_port_vlan(switch, port, vlan))
            if old_ref and old_ref != "quarantine":
                cmds.append(self.commands.remove_ruleset(fw, old_ref))
            if old_ref != "quarantine":
                cmds.append(self.commands.install_ruleset(fw, "quarantine"))
        # PENDING (re-enable): port left as the disable left it.
        return cmds

    def _transition(
        self,
        session: Session,
        to_state: SessionState,
        *,
        reason: str,
        trigger: str,
        trigger_ref: Optional[dict] = None,
        role: Optional[str] = None,
        vlan: Optional[int] = None,
        ruleset_ref: Optional[str] = None,
        portal: Optional[str] = None,
    ) -> TransitionRecord:
        from_state = session.state
        if (from_state, to_state) not in ALLOWED_TRANSITIONS:
            raise InvalidTransitionError(
                f"{session.session_id}: illegal transition {from_state.value} -> {to_state.value}"
            )
        commands = self._enforcement_for(session, to_state, vlan, ruleset_ref)
        session.state = to_state
        session.last_reason = reason
        if to_state == SessionState.ACTIVE:
            session.role = role
            session.vlan = vlan
            session.ruleset_ref = ruleset_ref
            session.portal = None
            session.denied_applications = ()
        elif to_state == SessionState.QUARANTINED:
            session.role = None
            session.vlan = vlan
            session.ruleset_ref = "quarantine"
            session.portal = portal
        elif to_state in (SessionState.TERMINATED, SessionState.DISABLED):
            session.role = None
            session.vlan = self.nac_policy.quarantine_vlan
            session.ruleset_ref = None
            session.portal = None
            session.rate_limit_kbps = None
        elif to_state == SessionState.PENDING:
            session.role = None
            session.ruleset_ref = None
            session.portal = None

        env = self._audit(
            "session-transition",
            {
                "session_id": session.session_id,
                "from": from_state.value,
                "to": to_state.value,
                "reason": reason,
                "trigger": trigger,
                "trigger_ref": trigger_ref,
                "user": session.user.to_json(),
                "role": session.role,
                "vlan": session.vlan,
                "ruleset_ref": session.ruleset_ref,
                "portal": session.portal,
                "rate_limit_kbps": session.rate_limit_kbps,
                "denied_applications": list(session.denied_applications),
                "commands": [c.to_json() for c in commands],
            },
        )
        record = TransitionRecord(
            seq=env.seq,
            at=env.ts,
            from_state=from_state.value,
            to_state=to_state.value,
            reason=reason,
            trigger=trigger,
        )
        session.history.append(record)
        return record

    def _update(self, session: Session, *, reason: str, trigger: str,
                trigger_ref: Optional[dict], commands: list[EnforcementCommand],
                **fields) -> None:
        """Attribute change without a state transition (rate limit, app deny,
        role/vlan refresh under an unchanged verdict)."""
        for key, value in fields.items():
            setattr(session, key, value)
        session.last_reason = reason

        def to_payload(value):
            if isinstance(value, tuple):
                return list(value)
            if isinstance(value, UserIdentity):
                return value.to_json()
            return value

        self._audit(
            "session-update",
            {
                "session_id": session.session_id,
                "state": session.state.value,
                "reason": reason,
                "trigger": trigger,
                "trigger_ref": trigger_ref,
                "fields": {k: to_payload(v) for k, v in fields.items()},
                "commands": [c.to_json() for c in commands],
            },
        )

    # -- admin / threat operations ---------------------------------------

    def terminate_session(self, session_id: str, reason: str, *, trigger: str = "admin",
                          trigger_ref: Optional[dict] = None) -> TransitionRecord:
        with self._lock:
            session = self.session(session_id)
            if session.state == SessionState.TERMINATED:
                raise InvalidTransitionError(f"{session_id} is already Terminated")
            return self._transition(session, SessionState.TERMINATED, reason=reason,
                                    trigger=trigger, trigger_ref=trigger_ref)

    def disable_session(self, session_id: str, reason: str, *, trigger: str = "admin",
                        trigger_ref: Optional[dict] = None) -> TransitionRecord:
        with self._lock:
            session = self.session(session_id)
            return self._transition(session, SessionState.DISABLED, reason=reason,
                                    trigger=trigger, trigger_ref=trigger_ref)

    def reenable_session(self, session_id: str, admin_id: str) -> TransitionRecord:
        with self._lock:
            session = self.session(session_id)
            if session.state != SessionState.DISABLED:
                raise InvalidTransitionError(
                    f"{session_id}: re-enable requires Disabled, session is {session.state.value}"
                )
            return self._transition(session, SessionState.PENDING,
                                    reason=f"re-enabled by {admin_id}", trigger="admin")

    def quarantine_session(self, session_id: str, reason: str, *, trigger: str = "threat",
                           trigger_ref: Optional[dict] = None) -> Optional[TransitionRecord]:
        with self._lock:
            session = self.session(session_id)
            if session.state == SessionState.QUARANTINED:
                return None
            return self._transition(
                session,
                SessionState.QUARANTINED,
                reason=reason,
                trigger=trigger,
                trigger_ref=trigger_ref,
                vlan=self.nac_policy.quarantine_vlan,
                portal=Portal.REMEDIATION.value,
            )

    def restrict_applications(self, session_id: str, applications, reason: str, *,
                              trigger: str = "threat",
                              trigger_ref: Optional[dict] = None) -> str:
        """Keep the session Active but prepend deny rules for the listed
        applications to its ruleset. Returns the new ruleset ref."""
        with self._lock:
            session = self.session(session_id)
            if session.state != SessionState.ACTIVE:
                raise InvalidTransitionError(
                    f"{session_id}: application restriction requires Active"
                )
            denied = tuple(dict.fromkeys(session.denied_applications + tuple(applications)))
            base = self.resolve_ruleset(session.ruleset_ref or "main")
            deny_rules = [
                FirewallRule(
                    rule_id=i + 1,
                    nac_user=session.user.user_id,
                    nac_device="*",
                    src="*",
                    dst="*",
                    protocol="any",
                    application=app,
                    action="deny",
                )
                for i, app in enumerate(denied)
            ]
            renumbered = [
                FirewallRule(
                    rule_id=len(deny_rules) + i + 1,
                    nac_user=r.nac_user,
                    nac_device=r.nac_device,
                    src=r.src,
                    dst=r.dst,
                    protocol=r.protocol,
                    application=r.application,
                    action=r.action,
                )
                for i, r in enumerate(base.rules)
            ]
            ref = f"ctc:{session.session_id}"
            ruleset = RuleSet(rules=tuple(deny_rules + renumbered), ref=ref)
            self._dynamic_rulesets[ref] = ruleset
            fw = self.nac_policy.firewall_id
            cmds = []
            if session.ruleset_ref and session.ruleset_ref != ref:
                cmds.append(self.commands.remove_ruleset(fw, session.ruleset_ref))
            cmds.append(self.commands.install_ruleset(fw, ref))
            self._update(
                session,
                reason=reason,
                trigger=trigger,
                trigger_ref=trigger_ref,
                commands=cmds,
                denied_applications=denied,
                ruleset_ref=ref,
            )
            return ref

    def rate_limit_session(self, session_id: str, kbps: int, reason: str, *,
                           trigger: str = "threat",
                           trigger_ref: Optional[dict] = None) -> None:
        with self._lock:
            session = self.session(session_id)
            if session.state != SessionState.ACTIVE:
                raise InvalidTransitionError(f"{session_id}: rate limit requires Active")
            switch, port = session.location.command_target
            cmd = self.commands.set_rate_limit(switch, port, kbps)
            self._update(
                session,
                reason=reason,
                trigger=trigger,
                trigger_ref=trigger_ref,
                commands=[cmd],
                rate_limit_kbps=kbps,
            )

    # -- posture ingestion -------------------------------------------------

    def submit_posture_report(self, report: PostureReport) -> list:
        """Store a fresh report and re-evaluate sessions of that device."""
        with self._lock:
            self.posture_store.store_report(report)
            self._audit(
                "posture-report",
                {"mac": report.device.mac, "report": report.to_json()},
            )
            return self._reevaluate_device(report.device.mac, trigger="posture-change")

    def submit_scan_report(self, scan: ScanReport) -> dict:
        with self._lock:
            delta = self.posture_store.ingest_scan_report(scan, self.posture_policy)
            self._audit(
                "scan-report",
                {"mac": scan.mac, "scanned_at": scan.scanned_at, "delta": delta,
                 "state": self.posture_store.device_state_json(scan.mac)},
            )
            if delta.get("changed"):
                self._reevaluate_device(scan.mac, trigger="posture-change")
            return delta

    def remediate(self, session_id: str, check_id: str) -> dict:
        """Captive-portal remediation: simulated fix for one failing check,
        then re-evaluation of the session."""
        with self._lock:
            session = self.session(session_id)
            if not session.is_live:
                raise InvalidTransitionError(f"{session_id} is Terminated")
            result = self.posture_store.apply_remediation(
                session.device.mac, check_id, self.posture_policy
            )
            result["state"] = self.posture_store.device_state_json(session.device.mac)
            self._audit(
                "remediation",
                {"session_id": session_id, "mac": session.device.mac,
                 "check_id": check_id, "result": result},
            )
            if result.get("applied"):
                self.reevaluate(session_id, trigger="posture-change")
            return result

    def _reevaluate_device(self, mac: str, trigger: str) -> list:
        outcomes = []
        for session in list(self._sessions.values()):
            if session.is_live and session.device.mac == mac:
                outcomes.append(self.reevaluate(session.session_id, trigger=trigger))
        return outcomes

    # -- re-evaluation ------------------------------------------------------

    def reevaluate(self, session_id: str, trigger: str, *,
                   trigger_ref: Optional[dict] = None):
        """Recompute a session's verdict and apply the resulting transition.

        Disabled sessions respond only to admin re-enable; Terminated sessions
        are rejected.
        """
        with self._lock:
            session = self.session(session_id)
            if session.state == SessionState.TERMINATED:
                raise InvalidTransitionError(f"{session_id} is Terminated")
            if session.state == SessionState.DISABLED:
                return None, None
            decision = reevaluate_decision(
                session,
                directory=self.directory,
                allowlist=self.allowlist,
                posture_policy=self.posture_policy,
                nac_policy=self.nac_policy,
                posture_store=self.posture_store,
                clock=self.clock,
            )
            transition = self._apply_decision_to_session(session, decision, trigger, trigger_ref)
            return decision, transition

    def reevaluate_all(self, trigger: str) -> list:
        with self._lock:
            outcomes = []
            for session in list(self._sessions.values()):
                if session.is_live and session.state != SessionState.DISABLED:
                    outcomes.append(self.reevaluate(session.session_id, trigger=trigger))
            return outcomes

    def _apply_decision_to_session(self, session: Session, decision: PolicyDecision,
                                   trigger: str, trigger_ref: Optional[dict]):
        if decision.verdict == VerdictKind.DENY:
            return self._transition(
                session,
                SessionState.TERMINATED,
                reason=f"deny:{decision.reason}",
                trigger=trigger,
                trigger_ref=trigger_ref,
            )
        if decision.verdict == VerdictKind.GRANT:
            # Refresh the identity snapshot: directory roles may have changed.
            user_changed = decision.identity.to_json() != session.user.to_json()
            session.user = decision.identity
            if session.state == SessionState.ACTIVE:
                if (session.role, session.vlan) != (decision.role, decision.vlan_id) or user_changed:
                    switch, port = session.location.command_target
                    cmds = []
                    if session.vlan != decision.vlan_id:
                        cmds.append(self.commands.set_port_vlan(switch, port, decision.vlan_id))
                    self._update(
                        session,
                        reason="re-granted",
                        trigger=trigger,
                        trigger_ref=trigger_ref,
                        commands=cmds,
                        user=decision.identity,
                        role=decision.role,
                        vlan=decision.vlan_id,
                    )
                return None
            return self._transition(
                session,
                SessionState.ACTIVE,
                reason="granted",
                trigger=trigger,
                trigger_ref=trigger_ref,
                role=decision.role,
                vlan=decision.vlan_id,
                ruleset_ref=decision.ruleset_ref,
            )
        # Quarantine
        if session.state == SessionState.QUARANTINED:
            if session.portal != (decision.portal.value if decision.portal else None):
                self._update(
                    session,
                    reason=decision.reason or "quarantined",
                    trigger=trigger,
                    trigger_ref=trigger_ref,
                    commands=[],
                    portal=decision.portal.value if decision.portal else None,
                )
            return None
        return self._transition(
            session,
            SessionState.QUARANTINED,
            reason=decision.reason or "quarantined",
            trigger=trigger,
            trigger_ref=trigger_ref,
            vlan=decision.vlan_id,
            portal=decision.portal.value if decision.portal else None,
        )

    # -- coordinated threat control -----------------------------------------

    def ingest_alert_envelope(self, kind: str, payload: dict) -> EventEnvelope:
        """Mint an envelope on the sensor/IDS source channel."""
        return self.envelopes.next_envelope(SENSOR_SOURCE, kind, payload)

    def apply_threat_event(self, evt: ThreatEvent, *, via: str = "api",
                           transport: Optional[dict] = None,
                           source_envelope: Optional[EventEnvelope] = None) -> dict:
        """Full coordinated-threat-control pipeline for one normalized event:
        correlate to the owning session, select the policy action, dedup, and
        apply through the session operations. Returns the disposition.

        ``transport`` carries channel metadata (syslog PRI/host, sensor id)
        retained in the ingestion envelope.
        """
        with self._lock:
            if source_envelope is None:
                payload = {"via": via, "event": evt.to_json()}
                if transport:
                    payload["transport"] = transport
                source_envelope = self.ingest_alert_envelope("ids-alert", payload)
            trigger_ref = {"source": source_envelope.source, "seq": source_envelope.seq}
            key = evt.dedup_key(self.dedup_window_ms)
            disposition: dict = {
                "via": via,
                "alert": source_envelope.to_json(),
                "dedup_key": key,
                "session_id": None,
                "clause": None,
                "action": None,
                "outcome": None,
            }
            # Only alerts that led to an applied action enter the seen set, so
            # a replayed alert is suppressed even if its session is gone.
            if key in self._seen_alerts:
                disposition["outcome"] = "suppressed-duplicate"
                self._audit("threat-event", disposition)
                return disposition
            session_id = correlate(evt, self.live_sessions())
            disposition["session_id"] = session_id
            if session_id is None:
                disposition["outcome"] = "uncorrelated"
                self._audit("threat-event", disposition)
                return disposition
            clause_idx = match_clause(evt, self.threat_policy)
            if clause_idx is None:
                disposition["outcome"] = "no-matching-clause"
                self._audit("threat-event", disposition)
                return disposition
            action = self.threat_policy.clauses[clause_idx].action
            disposition["clause"] = clause_idx
            disposition["action"] = action.to_json()
            self._seen_alerts.add(key)
            reason = f"threat:{evt.gid}:{evt.sid}:{evt.rev} {evt.category}"
            try:
                detail = self._apply_ctc_action(session_id, action, reason, trigger_ref)
                disposition["outcome"] = "applied"
                disposition["detail"] = detail
            except InvalidTransitionError as exc:
                disposition["outcome"] = "not-applied"
                disposition["detail"] = str(exc)
            self._audit("threat-event", disposition)
            return disposition

    def _apply_ctc_action(self, session_id: str, action: CtcAction, reason: str,
                          trigger_ref: dict) -> dict:
        if action.kind == CtcActionKind.QUARANTINE_VLAN:
            rec = self.quarantine_session(session_id, reason, trigger_ref=trigger_ref)
            return {"transition": rec.to_json() if rec else "already-quarantined"}
        if action.kind == CtcActionKind.TERMINATE_SESSION:
            rec = self.terminate_session(session_id, reason, trigger="threat",
                                         trigger_ref=trigger_ref)
            return {"transition": rec.to_json()}
        if action.kind == CtcActionKind.DISABLE_UNTIL_ADMIN:
            rec = self.disable_session(session_id, reason, trigger="threat",
                                       trigger_ref=trigger_ref)
            return {"transition": rec.to_json()}
        if action.kind == CtcActionKind.ROLE_CHANGE:
            ref = self.restrict_applications(
                session_id, action.denied_applications, reason, trigger_ref=trigger_ref
            )
            return {"ruleset_ref": ref, "denied_applications": list(action.denied_applications)}
        self.rate_limit_session(session_id, action.rate_kbps, reason, trigger_ref=trigger_ref)
        return {"rate_kbps": action.rate_kbps}

    # -- policy swap ----------------------------------------------------------

    def swap_policy(self, name: str, policy_obj, *, reevaluate: bool = True) -> None:
        """Validate-then-swap for hot policy updates; affected sessions are
        re-evaluated under trigger=policy-change."""
        with self._lock:
            if name == "firewall":
                assert isinstance(policy_obj, RuleSet)
                self.firewall_rules = policy_obj
            elif name == "threat":
                assert isinstance(policy_obj, ThreatPolicy)
                self.threat_policy = policy_obj
            elif name == "posture":
                assert isinstance(policy_obj, PosturePolicy)
                self.posture_policy = policy_obj
            elif name == "nac":
                assert isinstance(policy_obj, NacPolicy)
                self.nac_policy = policy_obj
            else:
                raise ConfigurationError(f"unknown policy name {name!r}")
            self._audit("policy-swap", {"policy": name})
            if reevaluate:
                self.reevaluate_all(trigger="policy-change")

    def update_resolver(self, fqdn: str, addresses) -> None:
        with self._lock:
            self.resolver = update_resolution(
                self.resolver, fqdn, addresses, now_ms=self.clock.now_ms()
            )

    # -- replay -----------------------------------------------------------------

    def restore_from_audit(self, envelopes: Iterable[EventEnvelope]) -> int:
        """Rebuild the session table (and posture/guest state) by folding the
        audit stream. Nothing is re-audited and no commands are emitted."""
        with self._lock:
            count = 0
            max_sid = 0
            for env in envelopes:
                count += 1
                fold_session_event(self._sessions, env)
                payload = env.payload
                if env.kind == "session-open":
                    sid = payload["session_id"]
                    if sid.startswith("s-"):
                        max_sid = max(max_sid, int(sid.split("-")[1]))
                elif env.kind == "access-decision":
                    report = (payload.get("request") or {}).get("posture")
                    if report:
                        self.posture_store.store_report(PostureReport.from_json(report))
                elif env.kind == "posture-report":
                    self.posture_store.store_report(PostureReport.from_json(payload["report"]))
                elif env.kind == "scan-report":
                    self.posture_store.restore(payload["mac"], payload["state"])
                elif env.kind == "remediation":
                    state = payload.get("result", {}).get("state")
                    if state is not None:
                        self.posture_store.restore(payload["mac"], state)
                elif env.kind == "threat-event":
                    alert = payload.get("alert") or {}
                    if alert.get("source") == SENSOR_SOURCE:
                        self.envelopes.resume_from(SENSOR_SOURCE, alert["seq"])
                elif env.kind == "guest-registered":
                    self.directory.restore_guest(
                        DirectoryRecord.from_json(payload["record"]),
                        GuestRegistration.from_json(payload["registration"]),
                    )
                if env.source == AUDIT_SOURCE:
                    self.envelopes.resume_from(AUDIT_SOURCE, env.seq)
            self._session_counter = itertools.count(max_sid + 1)
            return count


def fold_session_event(sessions: dict, env: EventEnvelope) -> None:
    """Apply one audit envelope to a session table: the naive sequential
    reapplication used both for crash recovery and as the replay oracle."""
    payload = env.payload
    if env.kind == "session-open":
        session = Session(
            session_id=payload["session_id"],
            user=UserIdentity.from_json(payload["user"]),
            device=DeviceDescriptor.from_json(payload["device"]),
            location=NetworkLocation.from_json(payload["location"]),
            ip=payload["ip"],
            opened_at=payload["opened_at"],
        )
        sessions[session.session_id] = session
    elif env.kind == "session-transition":
        session = sessions[payload["session_id"]]
        session.state = SessionState(payload["to"])
        if "user" in payload:
            session.user = UserIdentity.from_json(payload["user"])
        session.role = payload["role"]
        session.vlan = payload["vlan"]
        session.ruleset_ref = payload["ruleset_ref"]
        session.portal = payload["portal"]
        session.rate_limit_kbps = payload["rate_limit_kbps"]
        session.denied_applications = tuple(payload["denied_applications"])
        session.last_reason = payload["reason"]
        session.history.append(
            TransitionRecord(
                seq=env.seq,
                at=env.ts,
                from_state=payload["from"],
                to_state=payload["to"],
                reason=payload["reason"],
                trigger=payload["trigger"],
            )
        )
    elif env.kind == "session-update":
        session = sessions[payload["session_id"]]
        for key, value in payload["fields"].items():
            if key == "denied_applications":
                value = tuple(value)
            elif key == "user":
                value = UserIdentity.from_json(value)
            setattr(session, key, value)
        session.last_reason = payload["reason"]


def replay_sessions(envelopes: Iterable[EventEnvelope]) -> dict:
    """Stand-alone session-table rebuild (no engine, no policies)."""
    sessions: dict[str, Session] = {}
    for env in envelopes:
        fold_session_event(sessions, env)
    return sessions


def sessions_digest(sessions: dict) -> str:
    return digest_of({sid: s.to_json() for sid, s in sorted(sessions.items())})
