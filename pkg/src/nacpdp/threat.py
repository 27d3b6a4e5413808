"""Coordinated threat control: IDS alerts in, session-scoped responses out.

Alerts arrive as single-line fast-alert records (directly, from a tailed file,
or wrapped in syslog datagrams), are normalized to ThreatEvents, correlated to
the live session owning the offending source address, and matched against an
ordered response policy. The selected action is applied through the decision
engine so all transitions flow through one choke point.

Fast-alert grammar (one line)::

    MM/DD-HH:MM:SS.ffffff [**] [GID:SID:REV] MSG [**] \
        [Classification: TEXT] [Priority: N] {PROTO} SRC[:SPORT] -> DST[:DPORT]

with PROTO one of TCP, UDP, ICMP; ports absent for ICMP. Timestamps carry no
year and are interpreted within a nominal non-leap year.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

DEFAULT_DEDUP_WINDOW_MS = 60_000

_MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_MONTH_OFFSET_DAYS = [0]
for _d in _MONTH_DAYS[:-1]:
    _MONTH_OFFSET_DAYS.append(_MONTH_OFFSET_DAYS[-1] + _d)


class AlertParseError(ValueError):
    """Fast-alert line did not match the grammar; carries the column position."""

    def __init__(self, message: str, column: int):
        self.column = column
        super().__init__(f"column {column}: {message}")


class CorrelationIntegrityError(RuntimeError):
    """Two live sessions share one address, violating the session invariant."""


def _ts_to_us(month: int, day: int, hour: int, minute: int, second: int, micro: int) -> int:
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    if not 1 <= day <= _MONTH_DAYS[month - 1]:
        raise ValueError(f"day out of range for month {month}: {day}")
    if hour > 23 or minute > 59 or second > 59:
        raise ValueError("time component out of range")
    days = _MONTH_OFFSET_DAYS[month - 1] + (day - 1)
    seconds = ((days * 24 + hour) * 60 + minute) * 60 + second
    return seconds * 1_000_000 + micro


def _us_to_ts(us: int) -> str:
    seconds, micro = divmod(us, 1_000_000)
    minutes, second = divmod(seconds, 60)
    hours, minute = divmod(minutes, 60)
    days, hour = divmod(hours, 24)
    month = 1
    while month < 12 and days >= _MONTH_OFFSET_DAYS[month]:
        month += 1
    day = days - _MONTH_OFFSET_DAYS[month - 1] + 1
    return f"{month:02d}/{day:02d}-{hour:02d}:{minute:02d}:{second:02d}.{micro:06d}"


@dataclass(frozen=True)
class ThreatEvent:
    gid: int
    sid: int
    rev: int
    message: str
    category: str
    priority: int
    protocol: str  # tcp | udp | icmp
    src: str
    dst: str
    src_port: Optional[int]
    dst_port: Optional[int]
    observed_at_us: int

    def __post_init__(self):
        if self.priority < 1:
            raise ValueError(f"priority must be >= 1, got {self.priority}")

    @property
    def sig(self) -> tuple[int, int, int]:
        return (self.gid, self.sid, self.rev)

    @property
    def observed_ms(self) -> int:
        return self.observed_at_us // 1000

    def dedup_key(self, window_ms: int = DEFAULT_DEDUP_WINDOW_MS) -> str:
        """Stable key identifying "the same alert" within one dedup window."""
        bucket = self.observed_ms // window_ms
        material = json.dumps(
            [self.gid, self.sid, self.rev, self.src, self.src_port, self.dst,
             self.dst_port, bucket],
            separators=(",", ":"),
        )
        return hashlib.sha256(material.encode()).hexdigest()

    def to_json(self) -> dict:
        return {
            "gid": self.gid,
            "sid": self.sid,
            "rev": self.rev,
            "message": self.message,
            "category": self.category,
            "priority": self.priority,
            "protocol": self.protocol,
            "src": self.src,
            "src_port": self.src_port,
            "dst": self.dst,
            "dst_port": self.dst_port,
            "observed_at_us": self.observed_at_us,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ThreatEvent":
        return cls(
            gid=int(doc["gid"]),
            sid=int(doc["sid"]),
            rev=int(doc["rev"]),
            message=doc["message"],
            category=doc["category"],
            priority=int(doc["priority"]),
            protocol=doc["protocol"],
            src=doc["src"],
            dst=doc["dst"],
            src_port=doc.get("src_port"),
            dst_port=doc.get("dst_port"),
            observed_at_us=int(doc["observed_at_us"]),
        )


class _Cursor:
    def __init__(self, line: str):
        self.line = line
        self.pos = 0

    def take(self, pattern: str, what: str) -> re.Match:
        match = re.compile(pattern).match(self.line, self.pos)
        if match is None:
            raise AlertParseError(f"expected {what}", self.pos + 1)
        self.pos = match.end()
        return match

    def done(self) -> bool:
        return self.pos >= len(self.line.rstrip())


def parse_snort_fast_alert(line: str) -> ThreatEvent:
    """Parse one fast-alert line; grammar violations raise AlertParseError
    with the 1-based column where parsing stopped."""
    if not line.strip():
        raise AlertParseError("empty line", 1)
    cur = _Cursor(line.rstrip("\n"))
    ts = cur.take(r"(\d{2})/(\d{2})-(\d{2}):(\d{2}):(\d{2})\.(\d{6})", "timestamp MM/DD-HH:MM:SS.ffffff")
    try:
        observed = _ts_to_us(*(int(g) for g in ts.groups()))
    except ValueError as exc:
        raise AlertParseError(str(exc), 1) from None
    cur.take(r"\s+\[\*\*\]\s+", "[**] after timestamp")
    sig = cur.take(r"\[(\d+):(\d+):(\d+)\]\s+", "signature [GID:SID:REV]")
    msg = cur.take(r"(.*?)\s+\[\*\*\]\s+", "message terminated by [**]")
    cls = cur.take(r"\[Classification:\s*([^\]]+?)\s*\]\s+", "[Classification: TEXT]")
    pri = cur.take(r"\[Priority:\s*(\d+)\]\s+", "[Priority: N]")
    proto = cur.take(r"\{(TCP|UDP|ICMP)\}\s+", "{PROTO}")
    src = cur.take(r"(\d{1,3}(?:\.\d{1,3}){3})(?::(\d{1,5}))?", "source address")
    cur.take(r"\s+->\s+", "'->'")
    dst_col = cur.pos + 1
    dst = cur.take(r"(\d{1,3}(?:\.\d{1,3}){3})(?::(\d{1,5}))?", "destination address")
    if not cur.done():
        raise AlertParseError("trailing garbage", cur.pos + 1)

    protocol = proto.group(1).lower()
    src_port = int(src.group(2)) if src.group(2) else None
    dst_port = int(dst.group(2)) if dst.group(2) else None
    if protocol == "icmp" and (src_port is not None or dst_port is not None):
        raise AlertParseError("icmp alerts carry no ports", dst_col)
    priority = int(pri.group(1))
    if priority < 1:
        raise AlertParseError("priority must be >= 1", 1)
    for addr, grp in ((src.group(1), src), (dst.group(1), dst)):
        try:
            ipaddress.ip_address(addr)
        except ValueError:
            raise AlertParseError(f"bad address {addr}", grp.start(1) + 1) from None
    return ThreatEvent(
        gid=int(sig.group(1)),
        sid=int(sig.group(2)),
        rev=int(sig.group(3)),
        message=msg.group(1),
        category=cls.group(1),
        priority=priority,
        protocol=protocol,
        src=src.group(1),
        dst=dst.group(1),
        src_port=src_port,
        dst_port=dst_port,
        observed_at_us=observed,
    )


def format_fast_alert(evt: ThreatEvent) -> str:
    """Render an event back through the grammar. Re-parsing the result yields
    an equal event."""
    src = evt.src if evt.src_port is None else f"{evt.src}:{evt.src_port}"
    dst = evt.dst if evt.dst_port is None else f"{evt.dst}:{evt.dst_port}"
    return (
        f"{_us_to_ts(evt.observed_at_us)} [**] [{evt.gid}:{evt.sid}:{evt.rev}] "
        f"{evt.message} [**] [Classification: {evt.category}] "
        f"[Priority: {evt.priority}] {{{evt.protocol.upper()}}} {src} -> {dst}"
    )


_SYSLOG_RE = re.compile(
    r"^<(?P<pri>\d{1,3})>(?P<ts>[A-Z][a-z]{2}\s+\d{1,2}\s\d{2}:\d{2}:\d{2})\s"
    r"(?P<host>\S+)\ssnort:\s(?P<payload>.*)$"
)


@dataclass(frozen=True)
class SyslogAlert:
    pri: int
    timestamp: str
    host: str
    event: ThreatEvent


def parse_syslog_alert(datagram: Union[bytes, str]) -> SyslogAlert:
    """Parse a ``<PRI>TIMESTAMP HOST snort: PAYLOAD`` datagram whose payload is
    a fast-alert body."""
    text = datagram.decode("utf-8", "replace") if isinstance(datagram, bytes) else datagram
    match = _SYSLOG_RE.match(text.strip())
    if match is None:
        raise AlertParseError("expected <PRI>TIMESTAMP HOST snort: PAYLOAD", 1)
    return SyslogAlert(
        pri=int(match.group("pri")),
        timestamp=match.group("ts"),
        host=match.group("host"),
        event=parse_snort_fast_alert(match.group("payload")),
    )


def correlate(evt: ThreatEvent, sessions) -> Optional[str]:
    """Narrow a threat to the session owning its source address.

    ``sessions`` is an iterable of objects with session_id, ip and is_live.
    Returns the unique live session's id, or None (uncorrelated). Two live
    sessions on one address violate the session invariant and raise.
    """
    hits = [s for s in sessions if s.is_live and s.ip == evt.src]
    if len(hits) > 1:
        ids = ", ".join(s.session_id for s in hits)
        raise CorrelationIntegrityError(f"address {evt.src} owned by live sessions: {ids}")
    return hits[0].session_id if hits else None


class CtcActionKind(str, Enum):
    QUARANTINE_VLAN = "quarantine-vlan"
    ROLE_CHANGE = "role-change"
    TERMINATE_SESSION = "terminate-session"
    DISABLE_UNTIL_ADMIN = "disable-until-admin"
    RATE_LIMIT = "rate-limit"


@dataclass(frozen=True)
class CtcAction:
    kind: CtcActionKind
    denied_applications: tuple[str, ...] = ()
    rate_kbps: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CtcActionKind(self.kind))
        if self.kind == CtcActionKind.RATE_LIMIT:
            if self.rate_kbps is None or self.rate_kbps <= 0:
                raise ValueError("rate-limit requires kbps > 0")
        if self.kind == CtcActionKind.ROLE_CHANGE and not self.denied_applications:
            raise ValueError("role-change requires at least one denied application")

    def to_json(self) -> dict:
        doc: dict = {"kind": self.kind.value}
        if self.denied_applications:
            doc["denied_applications"] = list(self.denied_applications)
        if self.rate_kbps is not None:
            doc["rate_kbps"] = self.rate_kbps
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "CtcAction":
        return cls(
            kind=doc["kind"],
            denied_applications=tuple(doc.get("denied_applications", ())),
            rate_kbps=doc.get("rate_kbps"),
        )


_CLAUSE_FIELDS = ("category", "protocol", "sid", "src_prefix", "dst_prefix", "port",
                  "max_priority", "message_contains")


@dataclass(frozen=True)
class ThreatClause:
    action: CtcAction
    category: Optional[str] = None
    protocol: Optional[str] = None
    sid: Optional[int] = None
    src_prefix: Optional[str] = None
    dst_prefix: Optional[str] = None
    port: Optional[int] = None
    max_priority: Optional[int] = None
    message_contains: Optional[str] = None

    def __post_init__(self):
        if all(getattr(self, f) is None for f in _CLAUSE_FIELDS):
            raise ValueError("threat clause must match on at least one field")
        for prefix in (self.src_prefix, self.dst_prefix):
            if prefix is not None:
                ipaddress.ip_network(prefix, strict=False)

    def matches(self, evt: ThreatEvent) -> bool:
        if self.category is not None and evt.category != self.category:
            return False
        if self.protocol is not None and evt.protocol != self.protocol.lower():
            return False
        if self.sid is not None and evt.sid != self.sid:
            return False
        if self.max_priority is not None and evt.priority > self.max_priority:
            return False
        if self.src_prefix is not None:
            if ipaddress.ip_address(evt.src) not in ipaddress.ip_network(self.src_prefix, strict=False):
                return False
        if self.dst_prefix is not None:
            if ipaddress.ip_address(evt.dst) not in ipaddress.ip_network(self.dst_prefix, strict=False):
                return False
        if self.port is not None and self.port not in (evt.src_port, evt.dst_port):
            return False
        if self.message_contains is not None and self.message_contains not in evt.message:
            return False
        return True

    def to_json(self) -> dict:
        match = {f: getattr(self, f) for f in _CLAUSE_FIELDS if getattr(self, f) is not None}
        return {"match": match, "action": self.action.to_json()}


@dataclass(frozen=True)
class ThreatPolicy:
    clauses: tuple[ThreatClause, ...]

    def to_json(self) -> dict:
        return {"clauses": [c.to_json() for c in self.clauses]}

    @classmethod
    def from_json(cls, doc: dict) -> "ThreatPolicy":
        clauses = []
        for i, entry in enumerate(doc.get("clauses", [])):
            match = entry.get("match", {})
            unknown = set(match) - set(_CLAUSE_FIELDS)
            if unknown:
                raise ValueError(f"clause {i}: unknown match fields {sorted(unknown)}")
            clauses.append(ThreatClause(action=CtcAction.from_json(entry["action"]), **match))
        return cls(clauses=tuple(clauses))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ThreatPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))


def match_clause(evt: ThreatEvent, policy: ThreatPolicy) -> Optional[int]:
    """Index of the first matching clause (first-match order, mirroring the
    firewall), or None."""
    for i, clause in enumerate(policy.clauses):
        if clause.matches(evt):
            return i
    return None


def select_action(evt: ThreatEvent, policy: ThreatPolicy) -> Optional[CtcAction]:
    idx = match_clause(evt, policy)
    return policy.clauses[idx].action if idx is not None else None
