"""Identity-aware firewall rules with FQDN destinations and first-match evaluation.

A rule row extends the classic tuple with who is connecting (user or role,
resolved through the owning access-control session) and what device class it
is. Destinations (and, symmetrically, sources) may be domain names; a name
matches through a resolver snapshot of its full dynamic address set, so a
packet to any of the addresses is caught whether or not the client performed
name resolution.

Rule documents are plain text: one rule per line, 7 whitespace-separated
columns (nac_user nac_device src dst protocol application action), ``*`` as
wildcard, ``#`` starting a comment.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

PROTOCOLS = ("tcp", "udp", "icmp", "http", "any")
ACTIONS = ("permit", "deny")
WILDCARD = "*"

_FQDN_RE = re.compile(
    r"^(?=.{4,253}$)([a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?\.)+[a-z][a-z0-9-]{0,61}[a-z0-9]$"
)


class RuleParseError(ValueError):
    """One or more invalid lines in a rule document."""

    def __init__(self, errors: list[tuple[int, str, str]]):
        self.errors = errors
        lines = "; ".join(f"line {n}: {f}: {msg}" for n, f, msg in errors)
        super().__init__(lines)


class StaleResolverError(ValueError):
    """Resolver snapshot expired and stale matching was not permitted."""


class UnknownHostError(ValueError):
    pass


def is_fqdn(text: str) -> bool:
    return bool(_FQDN_RE.match(text.lower()))


def _parse_endpoint(text: str):
    """src/dst column: wildcard, address/prefix, or FQDN."""
    if text == WILDCARD:
        return WILDCARD
    try:
        return ipaddress.ip_network(text, strict=False)
    except ValueError:
        pass
    lowered = text.lower()
    if is_fqdn(lowered):
        return lowered
    raise ValueError(f"neither an address/prefix nor a valid FQDN: {text!r}")


@dataclass(frozen=True)
class FirewallRule:
    rule_id: int  # ordinal position within the ruleset, starting at 1
    nac_user: str  # user_id, role name, or *
    nac_device: str  # device class or *
    src: object  # ip_network | fqdn str | *
    dst: object
    protocol: str
    application: str
    action: str

    def endpoint_text(self, value) -> str:
        if value == WILDCARD:
            return WILDCARD
        if isinstance(value, str):
            return value
        if value.prefixlen == value.max_prefixlen:
            return str(value.network_address)
        return str(value)

    def to_line(self) -> str:
        return " ".join(
            [
                self.nac_user,
                self.nac_device,
                self.endpoint_text(self.src),
                self.endpoint_text(self.dst),
                self.protocol,
                self.application,
                self.action,
            ]
        )


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[FirewallRule, ...]
    ref: str = "main"

    def __len__(self) -> int:
        return len(self.rules)

    def to_document(self) -> str:
        return "\n".join(r.to_line() for r in self.rules) + ("\n" if self.rules else "")

    def fqdns(self) -> set[str]:
        names = set()
        for rule in self.rules:
            for endpoint in (rule.src, rule.dst):
                if isinstance(endpoint, str) and endpoint != WILDCARD:
                    names.add(endpoint)
        return names


def parse_rules(document: str, ref: str = "main") -> RuleSet:
    """Parse a rule document. All invalid lines are collected and reported
    together, each with its line number and the offending field."""
    rules: list[FirewallRule] = []
    errors: list[tuple[int, str, str]] = []
    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        columns = line.split()
        if len(columns) != 7:
            errors.append((lineno, "row", f"expected 7 columns, got {len(columns)}"))
            continue
        nac_user, nac_device, src_text, dst_text, protocol, application, action = columns
        protocol = protocol.lower()
        action = action.lower()
        ok = True
        src = dst = None
        try:
            src = _parse_endpoint(src_text)
        except ValueError as exc:
            errors.append((lineno, "src", str(exc)))
            ok = False
        try:
            dst = _parse_endpoint(dst_text)
        except ValueError as exc:
            errors.append((lineno, "dst", str(exc)))
            ok = False
        if protocol not in PROTOCOLS:
            errors.append((lineno, "protocol", f"unknown protocol {protocol!r}"))
            ok = False
        if action not in ACTIONS:
            errors.append((lineno, "action", f"unknown action {action!r}"))
            ok = False
        if ok:
            rules.append(
                FirewallRule(
                    rule_id=len(rules) + 1,
                    nac_user=nac_user,
                    nac_device=nac_device,
                    src=src,
                    dst=dst,
                    protocol=protocol,
                    application=application,
                    action=action,
                )
            )
    if errors:
        raise RuleParseError(errors)
    return RuleSet(rules=tuple(rules), ref=ref)


def load_rules(path: Union[str, Path], ref: str = "main") -> RuleSet:
    return parse_rules(Path(path).read_text(), ref=ref)


@dataclass(frozen=True)
class ResolverSnapshot:
    """Immutable FQDN -> address-set map. Updates build a new snapshot.

    ``ttl_s`` of None means the snapshot never goes stale (fixture data);
    otherwise matching against an expired snapshot is an error unless stale
    matching is explicitly permitted.
    """

    entries: dict = field(default_factory=dict)  # fqdn -> frozenset[str]
    snapshot_at: int = 0
    ttl_s: Optional[int] = None

    def __post_init__(self):
        frozen = {}
        for fqdn, addresses in self.entries.items():
            addr_set = frozenset(str(ipaddress.ip_address(a)) for a in addresses)
            if not addr_set:
                raise ValueError(f"empty address set for {fqdn}")
            frozen[fqdn.lower()] = addr_set
        object.__setattr__(self, "entries", frozen)

    def addresses(self, fqdn: str) -> frozenset:
        return self.entries.get(fqdn.lower(), frozenset())

    def expired(self, now_ms: int) -> bool:
        if self.ttl_s is None:
            return False
        return self.snapshot_at + self.ttl_s * 1000 < now_ms

    @classmethod
    def load(cls, path: Union[str, Path], snapshot_at: int = 0,
             ttl_s: Optional[int] = None) -> "ResolverSnapshot":
        doc = json.loads(Path(path).read_text())
        return cls(entries=doc, snapshot_at=snapshot_at, ttl_s=ttl_s)


def update_resolution(resolver: ResolverSnapshot, fqdn: str, addresses,
                      now_ms: Optional[int] = None) -> ResolverSnapshot:
    """Replace the address set for one FQDN, returning a new snapshot.

    Addresses previously in the set and now absent stop matching. Empty
    address sets are rejected.
    """
    addresses = list(addresses)
    if not addresses:
        raise ValueError(f"refusing empty address set for {fqdn}")
    entries = dict(resolver.entries)
    entries[fqdn.lower()] = addresses
    return ResolverSnapshot(
        entries=entries,
        snapshot_at=resolver.snapshot_at if now_ms is None else now_ms,
        ttl_s=resolver.ttl_s,
    )


@dataclass(frozen=True)
class SessionFacts:
    """What the firewall needs to know about the session owning a source."""

    user_id: str
    roles: tuple[str, ...]
    device_class: str


@dataclass(frozen=True)
class PacketContext:
    src: str
    dst: str
    protocol: str
    application: str = WILDCARD
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    session_ref: Optional[str] = None

    def __post_init__(self):
        if self.protocol not in ("tcp", "udp", "icmp", "http"):
            raise ValueError(f"unknown packet protocol {self.protocol!r}")
        if self.protocol == "icmp" and (self.src_port is not None or self.dst_port is not None):
            raise ValueError("icmp packets carry no ports")
        object.__setattr__(self, "src", str(ipaddress.ip_address(self.src)))
        object.__setattr__(self, "dst", str(ipaddress.ip_address(self.dst)))


@dataclass(frozen=True)
class Verdict:
    action: str
    rule_id: Optional[int]  # None when the default action applied
    default_used: bool = False
    unknown_session: bool = False

    def to_json(self) -> dict:
        return {
            "action": self.action,
            "rule_id": self.rule_id if self.rule_id is not None else "default",
            "default_used": self.default_used,
            "unknown_session": self.unknown_session,
        }


def _endpoint_matches(rule_endpoint, address: str, resolver: ResolverSnapshot) -> bool:
    if rule_endpoint == WILDCARD:
        return True
    if isinstance(rule_endpoint, str):  # FQDN: membership in the resolved set
        return address in resolver.addresses(rule_endpoint)
    return ipaddress.ip_address(address) in rule_endpoint


def rule_matches(rule: FirewallRule, pkt: PacketContext, facts: Optional[SessionFacts],
                 resolver: ResolverSnapshot) -> bool:
    # NAC columns compare case-insensitively: directories and policy tables
    # disagree on capitalization ("Guest" vs "guest", "iPAD" vs "ipad").
    if rule.nac_user != WILDCARD:
        if facts is None:
            return False
        wanted = rule.nac_user.casefold()
        if wanted != facts.user_id.casefold() and wanted not in {
            r.casefold() for r in facts.roles
        }:
            return False
    if rule.nac_device != WILDCARD:
        if facts is None or facts.device_class.casefold() != rule.nac_device.casefold():
            return False
    if rule.protocol != "any" and rule.protocol != pkt.protocol:
        return False
    if rule.application != WILDCARD and rule.application != pkt.application:
        return False
    if not _endpoint_matches(rule.src, pkt.src, resolver):
        return False
    if not _endpoint_matches(rule.dst, pkt.dst, resolver):
        return False
    return True


def match_packet(rules: RuleSet, pkt: PacketContext, sessions: dict,
                 resolver: ResolverSnapshot, default_action: str = "deny",
                 now_ms: Optional[int] = None, allow_stale: bool = False) -> Verdict:
    """First-match evaluation: the lowest rule_id whose every field matches
    wins; otherwise the configured default action applies.

    ``sessions`` maps session_ref -> SessionFacts. A packet referencing a
    session absent from the index is treated as having no session (only rules
    with wildcard NAC fields can match) and the verdict is flagged.
    """
    if default_action not in ACTIONS:
        raise ValueError(f"unknown default action {default_action!r}")
    if resolver.ttl_s is not None and not allow_stale:
        if now_ms is None:
            raise StaleResolverError("resolver snapshot has a ttl; pass now_ms or allow_stale")
        if resolver.expired(now_ms):
            raise StaleResolverError(
                f"resolver snapshot from {resolver.snapshot_at} expired at ttl {resolver.ttl_s}s"
            )
    facts = None
    unknown_session = False
    if pkt.session_ref is not None:
        facts = sessions.get(pkt.session_ref)
        unknown_session = facts is None
    for rule in rules.rules:
        if rule_matches(rule, pkt, facts, resolver):
            return Verdict(action=rule.action, rule_id=rule.rule_id,
                           unknown_session=unknown_session)
    return Verdict(action=default_action, rule_id=None, default_used=True,
                   unknown_session=unknown_session)
