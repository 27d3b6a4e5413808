"""Shared domain vocabulary: identities, devices, network locations.

These are immutable value types used across the decision engine, the firewall
evaluator, the threat pipeline and the fabric simulator. Every MAC address is
normalized to one canonical form (lowercase, colon-separated) so correlation
keys compare reliably.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class ModelError(ValueError):
    """Raised when a domain value fails validation."""


DEVICE_CLASSES = ("laptop", "ipad", "blackberry", "phone", "printer", "unknown")

ZONES = ("lan", "vpn", "dmz1", "dmz2", "guest")

_MAC_SEP_RE = re.compile(r"[:\-\.]")
_HEX_RE = re.compile(r"^[0-9a-f]{12}$")


def canonical_mac(raw: str) -> str:
    """Normalize a MAC address to lowercase colon form (aa:bb:cc:dd:ee:ff).

    Accepts colon, dash and dot separated input. Raises ModelError unless the
    value contains exactly 6 hex octets.
    """
    if not isinstance(raw, str):
        raise ModelError(f"MAC must be a string, got {type(raw).__name__}")
    digits = _MAC_SEP_RE.sub("", raw.strip().lower())
    if not _HEX_RE.match(digits):
        raise ModelError(f"malformed MAC address: {raw!r}")
    return ":".join(digits[i : i + 2] for i in range(0, 12, 2))


class IdentityKind(str, Enum):
    EMPLOYEE = "employee"
    GUEST = "guest"
    CONTRACTOR = "contractor"
    DEVICE_PROFILE = "device-profile"


@dataclass(frozen=True)
class UserIdentity:
    """An authenticated principal and the roles it holds.

    ``roles`` is ordered: the first role is the primary one used for VLAN and
    ruleset selection. Order is preserved from the directory record.
    """

    user_id: str
    display_name: str
    roles: tuple[str, ...]
    kind: IdentityKind

    def __post_init__(self):
        if not self.user_id:
            raise ModelError("user_id must be non-empty")
        if len(set(self.roles)) != len(self.roles):
            raise ModelError("duplicate roles")
        if self.kind == IdentityKind.GUEST and tuple(self.roles) != ("guest",):
            raise ModelError("guest identities carry exactly the guest role")

    @property
    def primary_role(self) -> str:
        if not self.roles:
            raise ModelError(f"identity {self.user_id} has no roles")
        return self.roles[0]

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "display_name": self.display_name,
            "roles": list(self.roles),
            "kind": self.kind.value,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "UserIdentity":
        return cls(
            user_id=doc["user_id"],
            display_name=doc.get("display_name", doc["user_id"]),
            roles=tuple(doc.get("roles", ())),
            kind=IdentityKind(doc.get("kind", "employee")),
        )


@dataclass(frozen=True)
class DeviceDescriptor:
    mac: str
    device_class: str = "unknown"
    managed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mac", canonical_mac(self.mac))
        if self.device_class not in DEVICE_CLASSES:
            raise ModelError(f"unknown device class: {self.device_class!r}")

    def to_json(self) -> dict:
        return {"mac": self.mac, "device_class": self.device_class, "managed": self.managed}

    @classmethod
    def from_json(cls, doc: dict) -> "DeviceDescriptor":
        return cls(
            mac=doc["mac"],
            device_class=doc.get("device_class", "unknown"),
            managed=bool(doc.get("managed", False)),
        )


@dataclass(frozen=True)
class NetworkLocation:
    """Where an endpoint attaches: a switch port or a VPN gateway, plus zone.

    Exactly one attachment variant is populated.
    """

    zone: str
    switch_id: Optional[str] = None
    port_id: Optional[str] = None
    vpn_gateway_id: Optional[str] = None

    def __post_init__(self):
        if self.zone not in ZONES:
            raise ModelError(f"unknown zone: {self.zone!r}")
        switch_attach = self.switch_id is not None or self.port_id is not None
        if switch_attach and (self.switch_id is None or self.port_id is None):
            raise ModelError("switch attachment requires both switch_id and port_id")
        if switch_attach == (self.vpn_gateway_id is not None):
            raise ModelError("exactly one of switch port / VPN gateway must be set")

    @property
    def attachment(self) -> tuple:
        """Hashable attachment key used for duplicate-session detection."""
        if self.vpn_gateway_id is not None:
            return ("vpn", self.vpn_gateway_id)
        return ("switch", self.switch_id, self.port_id)

    @property
    def command_target(self) -> tuple[str, str]:
        """(switch, port) pair that enforcement commands address.

        VPN attachments are addressed as a per-gateway pseudo port.
        """
        if self.vpn_gateway_id is not None:
            return (self.vpn_gateway_id, "tunnel")
        return (self.switch_id, self.port_id)

    def to_json(self) -> dict:
        doc = {"zone": self.zone}
        if self.vpn_gateway_id is not None:
            doc["vpn_gateway_id"] = self.vpn_gateway_id
        else:
            doc["switch_id"] = self.switch_id
            doc["port_id"] = self.port_id
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "NetworkLocation":
        return cls(
            zone=doc["zone"],
            switch_id=doc.get("switch_id"),
            port_id=doc.get("port_id"),
            vpn_gateway_id=doc.get("vpn_gateway_id"),
        )
