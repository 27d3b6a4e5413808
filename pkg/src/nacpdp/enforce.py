"""Enforcement command vocabulary shared by the decision engine and the PEPs.

The engine never touches a switch or firewall directly: it emits commands
(carrying a strictly increasing command_seq) into a sink. The simulated fabric
applies them to its state; a live deployment would translate them to device
configuration.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional


class CommandKind(str, Enum):
    SET_PORT_VLAN = "SetPortVlan"
    SHUT_PORT = "ShutPort"
    SET_RATE_LIMIT = "SetRateLimit"
    INSTALL_RULESET = "InstallRuleset"
    REMOVE_RULESET = "RemoveRuleset"


@dataclass(frozen=True)
class EnforcementCommand:
    command_seq: int
    kind: CommandKind
    switch: Optional[str] = None
    port: Optional[str] = None
    vlan: Optional[int] = None
    kbps: Optional[int] = None
    firewall: Optional[str] = None
    ruleset_ref: Optional[str] = None

    def to_json(self) -> dict:
        doc: dict = {"command_seq": self.command_seq, "kind": self.kind.value}
        for key in ("switch", "port", "vlan", "kbps", "firewall", "ruleset_ref"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        return doc

    def describe(self) -> str:
        if self.kind == CommandKind.SET_PORT_VLAN:
            return f"SetPortVlan({self.switch}, {self.port}, {self.vlan})"
        if self.kind == CommandKind.SHUT_PORT:
            return f"ShutPort({self.switch}, {self.port})"
        if self.kind == CommandKind.SET_RATE_LIMIT:
            return f"SetRateLimit({self.switch}, {self.port}, {self.kbps} kbps)"
        if self.kind == CommandKind.INSTALL_RULESET:
            return f"InstallRuleset({self.firewall}, {self.ruleset_ref})"
        return f"RemoveRuleset({self.firewall}, {self.ruleset_ref})"


class CommandIssuer:
    """Mints commands with a strictly increasing sequence and fans them out to
    an optional sink (the simulator, in tests and scenarios)."""

    def __init__(self, sink: Optional[Callable[[EnforcementCommand], None]] = None):
        self._sink = sink
        self._seq = 0
        self._lock = threading.Lock()
        self.log: list[EnforcementCommand] = []

    def set_sink(self, sink: Optional[Callable[[EnforcementCommand], None]]) -> None:
        self._sink = sink

    def _issue(self, **fields) -> EnforcementCommand:
        with self._lock:
            self._seq += 1
            cmd = EnforcementCommand(command_seq=self._seq, **fields)
            self.log.append(cmd)
        if self._sink is not None:
            self._sink(cmd)
        return cmd

    def set_port_vlan(self, switch: str, port: str, vlan: int) -> EnforcementCommand:
        return self._issue(kind=CommandKind.SET_PORT_VLAN, switch=switch, port=port, vlan=vlan)

    def shut_port(self, switch: str, port: str) -> EnforcementCommand:
        return self._issue(kind=CommandKind.SHUT_PORT, switch=switch, port=port)

    def set_rate_limit(self, switch: str, port: str, kbps: int) -> EnforcementCommand:
        return self._issue(kind=CommandKind.SET_RATE_LIMIT, switch=switch, port=port, kbps=kbps)

    def install_ruleset(self, firewall: str, ruleset_ref: str) -> EnforcementCommand:
        return self._issue(kind=CommandKind.INSTALL_RULESET, firewall=firewall,
                           ruleset_ref=ruleset_ref)

    def remove_ruleset(self, firewall: str, ruleset_ref: str) -> EnforcementCommand:
        return self._issue(kind=CommandKind.REMOVE_RULESET, firewall=firewall,
                           ruleset_ref=ruleset_ref)
