"""Simulated network fabric: switches, sensors, firewall PEPs, scripted traffic.

The simulator makes enforcement observable at desk scale. It runs the same
decision engine as the live service, feeds it through the same alert-ingestion
path, and applies the engine's enforcement commands to an in-memory fabric:

* delivery is layer-2: an event reaches its destination only when both ports
  are up, both sit on the same VLAN, and no firewall PEP on the path denies it;
* an IDS tap on a zone observes an event when source and destination are both
  in the zone or the path transits the zone; an inline IPS on a link observes
  only events whose path crosses that link;
* a sensor that observes a listed signature emits a fast-alert line, which is
  parsed back and pushed through coordinated threat control synchronously.

Scenario files are JSON documents with keys ``topology`` (switches, links,
zones, hosts, sensors, firewalls, signatures), ``policies``, ``script`` and
``assertions``. Everything runs on virtual time; a fixed scenario produces a
byte-identical report on every run.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .audit import AuditLog
from .clock import VirtualClock
from .enforce import CommandKind, EnforcementCommand
from .engine import AccessRequest, NacPolicy, PdpEngine
from .firewall import PacketContext, ResolverSnapshot, match_packet, parse_rules
from .identity import Credential, Directory, DirectoryRecord, GuestRegistration, make_verifier
from .model import ZONES, DeviceDescriptor, NetworkLocation, canonical_mac
from .posture import PosturePolicy, PostureReport
from .threat import ThreatEvent, ThreatPolicy, format_fast_alert, parse_snort_fast_alert

# Scenario fixtures hash credentials quickly; 10 iterations is plenty for toys.
FIXTURE_PBKDF2_ITERATIONS = 10

DEFAULT_POSTURE_POLICY = {
    "requirements": [
        {
            "id": "av-present",
            "check": "av_installed",
            "op": "=",
            "threshold": True,
            "severity": "mandatory",
            "instruction": "Install antivirus",
        }
    ]
}


class ScenarioError(ValueError):
    """Invalid scenario document (topology, policies or script)."""


class AssertionFailed(RuntimeError):
    def __init__(self, name: str, detail: str):
        self.assertion_name = name
        super().__init__(f"scenario assertion failed: {name}: {detail}")


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass
class Port:
    vlan: int
    shut: bool = False
    rate_limit_kbps: Optional[int] = None


@dataclass(frozen=True)
class Host:
    host_id: str
    switch: str
    port: str
    ip: str
    mac: str
    device_class: str = "laptop"


@dataclass(frozen=True)
class Sensor:
    sensor_id: str
    kind: str  # ids-tap | inline-ips
    zone: Optional[str] = None
    link: Optional[frozenset] = None
    signatures: frozenset = frozenset()


@dataclass
class FirewallPep:
    fw_id: str
    link: frozenset
    installed: list = field(default_factory=list)  # ruleset refs, install order


class Topology:
    """Validated fabric description plus mutable port state."""

    def __init__(self, doc: dict):
        self.switches: dict[str, dict[str, Port]] = {}
        for sw, swdoc in doc.get("switches", {}).items():
            ports = swdoc.get("ports", {})
            if not ports:
                raise ScenarioError(f"switch {sw} declares no ports")
            self.switches[sw] = {p: Port(vlan=int(v)) for p, v in ports.items()}

        self.links: list[frozenset] = []
        for pair in doc.get("links", []):
            a, b = pair
            for sw in (a, b):
                if sw not in self.switches:
                    raise ScenarioError(f"link references unknown switch {sw!r}")
            self.links.append(frozenset((a, b)))

        self.zones: dict[str, set] = {}
        for zone, members in doc.get("zones", {}).items():
            if zone not in ZONES:
                raise ScenarioError(f"unknown zone name {zone!r}")
            for sw in members:
                if sw not in self.switches:
                    raise ScenarioError(f"zone {zone} references unknown switch {sw!r}")
            self.zones[zone] = set(members)

        self.hosts: dict[str, Host] = {}
        seen_ips = set()
        for host_id, hdoc in doc.get("hosts", {}).items():
            sw = hdoc["switch"]
            port = hdoc["port"]
            if sw not in self.switches or port not in self.switches[sw]:
                raise ScenarioError(f"host {host_id} attached to unknown port {sw}/{port}")
            ip = hdoc["ip"]
            if ip in seen_ips:
                raise ScenarioError(f"duplicate host address {ip}")
            seen_ips.add(ip)
            self.hosts[host_id] = Host(
                host_id=host_id,
                switch=sw,
                port=port,
                ip=ip,
                mac=canonical_mac(hdoc["mac"]),
                device_class=hdoc.get("device_class", "laptop"),
            )

        self.signatures: dict[int, dict] = {}
        for sid, sdoc in doc.get("signatures", {}).items():
            self.signatures[int(sid)] = {
                "message": sdoc.get("message", f"signature {sid}"),
                "category": sdoc.get("category", "Misc activity"),
                "priority": int(sdoc.get("priority", 2)),
            }

        self.sensors: list[Sensor] = []
        for sdoc in doc.get("sensors", []):
            kind = sdoc.get("type")
            sigs = frozenset(int(s) for s in sdoc.get("signatures", []))
            for sig in sigs:
                if sig not in self.signatures:
                    raise ScenarioError(
                        f"sensor {sdoc.get('id')} lists signature {sig} missing from the catalog"
                    )
            if kind == "ids-tap":
                zone = sdoc.get("zone")
                if zone not in self.zones:
                    raise ScenarioError(f"tap {sdoc.get('id')} on unknown zone {zone!r}")
                self.sensors.append(
                    Sensor(sensor_id=sdoc["id"], kind=kind, zone=zone, signatures=sigs)
                )
            elif kind == "inline-ips":
                link = frozenset(sdoc.get("link", ()))
                if link not in self.links:
                    raise ScenarioError(f"inline IPS {sdoc.get('id')} on unknown link {sorted(link)}")
                self.sensors.append(
                    Sensor(sensor_id=sdoc["id"], kind=kind, link=link, signatures=sigs)
                )
            else:
                raise ScenarioError(f"unknown sensor type {kind!r}")

        self.firewalls: dict[str, FirewallPep] = {}
        for fdoc in doc.get("firewalls", []):
            link = frozenset(fdoc.get("link", ()))
            if link not in self.links:
                raise ScenarioError(f"firewall {fdoc.get('id')} on unknown link {sorted(link)}")
            self.firewalls[fdoc["id"]] = FirewallPep(fw_id=fdoc["id"], link=link)

    # -- graph helpers ----------------------------------------------------

    def neighbors(self, sw: str) -> list[str]:
        out = []
        for link in self.links:
            if sw in link:
                (other,) = link - {sw}
                out.append(other)
        return sorted(out)

    def path_switches(self, src_sw: str, dst_sw: str) -> Optional[list[str]]:
        """Shortest switch path, endpoints included; None when disconnected."""
        if src_sw == dst_sw:
            return [src_sw]
        prev: dict[str, str] = {}
        queue = deque([src_sw])
        seen = {src_sw}
        while queue:
            here = queue.popleft()
            for nxt in self.neighbors(here):
                if nxt in seen:
                    continue
                seen.add(nxt)
                prev[nxt] = here
                if nxt == dst_sw:
                    path = [dst_sw]
                    while path[-1] != src_sw:
                        path.append(prev[path[-1]])
                    return list(reversed(path))
                queue.append(nxt)
        return None

    def path_links(self, path: list[str]) -> list[frozenset]:
        return [frozenset(pair) for pair in zip(path, path[1:])]

    def zone_of_switch(self, sw: str) -> Optional[str]:
        for zone, members in self.zones.items():
            if sw in members:
                return zone
        return None

    def zone_of_host(self, host: Host) -> str:
        return self.zone_of_switch(host.switch) or "lan"

    def port_of(self, host: Host) -> Port:
        return self.switches[host.switch][host.port]

    # -- enforcement ------------------------------------------------------

    def apply_command(self, cmd: EnforcementCommand) -> None:
        """PEP side of the command channel. Unknown targets are rejected."""
        if cmd.kind in (CommandKind.SET_PORT_VLAN, CommandKind.SHUT_PORT,
                        CommandKind.SET_RATE_LIMIT):
            switch = self.switches.get(cmd.switch)
            if switch is None or cmd.port not in switch:
                raise ScenarioError(f"command targets unknown port {cmd.switch}/{cmd.port}")
            port = switch[cmd.port]
            if cmd.kind == CommandKind.SET_PORT_VLAN:
                port.vlan = cmd.vlan
            elif cmd.kind == CommandKind.SHUT_PORT:
                port.shut = True
            else:
                port.rate_limit_kbps = cmd.kbps
            return
        fw = self.firewalls.get(cmd.firewall)
        if fw is None:
            raise ScenarioError(f"command targets unknown firewall {cmd.firewall!r}")
        if cmd.kind == CommandKind.INSTALL_RULESET:
            if cmd.ruleset_ref not in fw.installed:
                fw.installed.append(cmd.ruleset_ref)
        else:
            if cmd.ruleset_ref in fw.installed:
                fw.installed.remove(cmd.ruleset_ref)


def observers_for(topology: Topology, src: Host, dst: Host) -> list[str]:
    """Sensor ids that see an event from src to dst (visibility rule)."""
    path = topology.path_switches(src.switch, dst.switch)
    if path is None:
        path = [src.switch]
    links = set(topology.path_links(path))
    src_zone = topology.zone_of_switch(src.switch)
    dst_zone = topology.zone_of_switch(dst.switch)
    seen = []
    for sensor in topology.sensors:
        if sensor.kind == "ids-tap":
            both_inside = (
                src_zone == sensor.zone and dst_zone == sensor.zone and src_zone is not None
            )
            transits = any(sw in topology.zones[sensor.zone] for sw in path)
            if both_inside or transits:
                seen.append(sensor.sensor_id)
        else:
            if sensor.link in links:
                seen.append(sensor.sensor_id)
    return sorted(seen)


# ---------------------------------------------------------------------------
# Script
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrafficEvent:
    at: int
    src: str
    dst: str
    protocol: str = "tcp"
    application: str = "*"
    signature_id: Optional[int] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    kbps: Optional[int] = None


@dataclass(frozen=True)
class ControlEvent:
    at: int
    action: str
    params: dict


def _parse_script(entries: list) -> list:
    script = []
    last_at = None
    for i, entry in enumerate(entries):
        if "at" not in entry:
            raise ScenarioError(f"script[{i}]: missing 'at'")
        at = int(entry["at"])
        if last_at is not None and at < last_at:
            raise ScenarioError(f"script[{i}]: timestamps must be non-decreasing")
        last_at = at
        if "action" in entry:
            params = {k: v for k, v in entry.items() if k not in ("at", "action")}
            script.append(ControlEvent(at=at, action=entry["action"], params=params))
        else:
            for key in ("src", "dst"):
                if key not in entry:
                    raise ScenarioError(f"script[{i}]: traffic event missing {key!r}")
            protocol = entry.get("protocol", "tcp")
            if protocol == "icmp" and (entry.get("src_port") or entry.get("dst_port")):
                raise ScenarioError(f"script[{i}]: icmp events carry no ports")
            script.append(
                TrafficEvent(
                    at=at,
                    src=entry["src"],
                    dst=entry["dst"],
                    protocol=protocol,
                    application=entry.get("application", "*"),
                    signature_id=entry.get("signature_id"),
                    src_port=entry.get("src_port"),
                    dst_port=entry.get("dst_port"),
                    kbps=entry.get("kbps"),
                )
            )
    return script


@dataclass
class Scenario:
    name: str
    topology: Topology
    policies: dict
    script: list
    assertions: list


def load_scenario(source: Union[str, Path, dict]) -> Scenario:
    """Load and validate a scenario document (path or parsed dict)."""
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
        default_name = Path(source).stem
    else:
        doc = source
        default_name = "scenario"
    if "topology" not in doc:
        raise ScenarioError("scenario missing 'topology'")
    topology = Topology(doc["topology"])
    script = _parse_script(doc.get("script", []))
    for entry in script:
        if isinstance(entry, TrafficEvent):
            for host in (entry.src, entry.dst):
                if host not in topology.hosts:
                    raise ScenarioError(f"script references unknown host {host!r}")
    return Scenario(
        name=doc.get("name", default_name),
        topology=topology,
        policies=doc.get("policies", {}),
        script=script,
        assertions=doc.get("assertions", []),
    )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _build_engine(scenario: Scenario, clock: VirtualClock, fabric: Topology,
                  audit: Optional[AuditLog]) -> PdpEngine:
    pol = scenario.policies
    directory = Directory()
    for user in pol.get("users", []):
        directory.add_record(
            DirectoryRecord(
                user_id=user["user_id"],
                secret_verifier=make_verifier(
                    user["secret"], iterations=FIXTURE_PBKDF2_ITERATIONS
                ),
                roles=tuple(user["roles"]),
                enabled=user.get("enabled", True),
                display_name=user.get("display_name", ""),
            )
        )
    allowlist = {canonical_mac(m): r for m, r in pol.get("allowlist", {}).items()}
    posture_policy = PosturePolicy.from_json(pol.get("posture", DEFAULT_POSTURE_POLICY))
    if "nac" not in pol:
        raise ScenarioError("scenario policies must include 'nac'")
    nac_policy = NacPolicy.from_json(pol["nac"])
    rules_doc = pol.get("firewall_rules", "")
    if isinstance(rules_doc, list):
        rules_doc = "\n".join(rules_doc)
    firewall_rules = parse_rules(rules_doc)
    resolver = ResolverSnapshot(entries=pol.get("resolver", {}))
    threat_policy = ThreatPolicy.from_json(pol.get("threat", {"clauses": []}))
    address_plan = {
        (host.switch, host.port): host.ip for host in fabric.hosts.values()
    }
    return PdpEngine(
        directory=directory,
        allowlist=allowlist,
        posture_policy=posture_policy,
        nac_policy=nac_policy,
        firewall_rules=firewall_rules,
        resolver=resolver,
        threat_policy=threat_policy,
        clock=clock,
        audit=audit,
        command_sink=fabric.apply_command,
        address_plan=address_plan,
        dedup_window_ms=int(pol.get("dedup_window_ms", 60_000)),
        default_fw_action=pol.get("default_firewall_action", "deny"),
    )


class Simulation:
    """Deterministic fold over a time-ordered script."""

    def __init__(self, scenario: Scenario, audit: Optional[AuditLog] = None):
        self.scenario = scenario
        self.fabric = scenario.topology
        self.clock = VirtualClock(0)
        self.engine = _build_engine(scenario, self.clock, self.fabric, audit)
        self.traffic_log: list[dict] = []
        self.alert_lines: list[str] = []
        self._guest_creds: dict[str, Credential] = {}

    # -- control events -----------------------------------------------------

    def _host(self, host_id: str) -> Host:
        try:
            return self.fabric.hosts[host_id]
        except KeyError:
            raise ScenarioError(f"unknown host {host_id!r}") from None

    def _location_for(self, host: Host) -> NetworkLocation:
        return NetworkLocation(
            zone=self.fabric.zone_of_host(host), switch_id=host.switch, port_id=host.port
        )

    def _session_for_host(self, host: Host):
        return self.engine.session_by_ip(host.ip)

    def _do_access_request(self, event: ControlEvent) -> None:
        params = event.params
        host = self._host(params["host"])
        if params.get("use_guest"):
            cred = self._guest_creds.get(params["use_guest"])
            if cred is None:
                raise ScenarioError(
                    f"no guest registration recorded for {params['use_guest']!r}"
                )
        elif params.get("method", "password") == "mac-only":
            cred = Credential(method="mac-only", principal=host.mac)
        else:
            cred = Credential(
                method=params.get("method", "password"),
                principal=params["principal"],
                secret=params.get("secret"),
            )
        posture = None
        if "posture" in params:
            posture = PostureReport(
                device=DeviceDescriptor(mac=host.mac, device_class=host.device_class),
                checks=params["posture"],
                collected_at=event.at,
            )
        req = AccessRequest(
            cred=cred,
            device=DeviceDescriptor(mac=host.mac, device_class=host.device_class),
            location=self._location_for(host),
            posture=posture,
            requested_at=event.at,
        )
        self.engine.handle_access_request(req)

    def _do_control(self, event: ControlEvent) -> None:
        params = event.params
        if event.action == "access-request":
            self._do_access_request(event)
        elif event.action == "register-guest":
            reg = GuestRegistration(
                name=params.get("name", params["email"]),
                email=params["email"],
                sponsor=params.get("sponsor", ""),
                expiry_ms=int(params["expiry_ms"]),
            )
            _, cred = self.engine.register_guest(reg)
            self._guest_creds[params["email"]] = cred
        elif event.action == "remediate":
            host = self._host(params["host"])
            session = self._session_for_host(host)
            if session is None:
                raise ScenarioError(f"remediate: no live session for host {host.host_id}")
            self.engine.remediate(session.session_id, params["check_id"])
        elif event.action == "resolve-fqdn":
            self.engine.update_resolver(params["fqdn"], params["addresses"])
        elif event.action == "admin":
            host = self._host(params["host"])
            session = self._session_for_host(host)
            if session is None:
                raise ScenarioError(f"admin: no live session for host {host.host_id}")
            op = params["op"]
            if op == "terminate":
                self.engine.terminate_session(session.session_id, params.get("reason", "admin"))
            elif op == "disable":
                self.engine.disable_session(session.session_id, params.get("reason", "admin"))
            elif op == "reenable":
                self.engine.reenable_session(session.session_id, params.get("admin_id", "admin"))
            else:
                raise ScenarioError(f"unknown admin op {op!r}")
        else:
            raise ScenarioError(f"unknown script action {event.action!r}")

    # -- traffic -------------------------------------------------------------

    def _firewall_verdict(self, event: TrafficEvent, src: Host, dst: Host,
                          links: list) -> Optional[dict]:
        """Evaluate the event at every firewall PEP on the path; first explicit
        rule match wins, otherwise the default action."""
        on_path = [fw for fw in self.fabric.firewalls.values() if fw.link in set(links)]
        if not on_path:
            return None
        session = self._session_for_host(src)
        pkt = PacketContext(
            src=src.ip,
            dst=dst.ip,
            protocol=event.protocol,
            application=event.application,
            src_port=event.src_port,
            dst_port=event.dst_port,
            session_ref=session.session_id if session else None,
        )
        facts = self.engine.session_facts()
        default = self.engine.default_fw_action
        for fw in on_path:
            for ref in fw.installed:
                ruleset = self.engine.resolve_ruleset(ref)
                verdict = match_packet(
                    ruleset,
                    pkt,
                    facts,
                    self.engine.resolver,
                    default_action=default,
                    now_ms=self.clock.now_ms(),
                )
                if not verdict.default_used:
                    doc = verdict.to_json()
                    doc["firewall"] = fw.fw_id
                    doc["ruleset_ref"] = ref
                    return doc
        return {"action": default, "rule_id": "default", "default_used": True,
                "unknown_session": pkt.session_ref is None,
                "firewall": on_path[0].fw_id, "ruleset_ref": None}

    def _emit_alerts(self, event: TrafficEvent, src: Host, dst: Host,
                     observer_ids: list[str]) -> list[dict]:
        """Sensors that observed a cataloged signature emit fast-alert lines
        into the ingestion path; returns the threat dispositions."""
        if event.signature_id is None:
            return []
        catalog = self.fabric.signatures.get(event.signature_id)
        dispositions = []
        sensors = {s.sensor_id: s for s in self.fabric.sensors}
        for sensor_id in observer_ids:
            sensor = sensors[sensor_id]
            if event.signature_id not in sensor.signatures or catalog is None:
                continue
            evt = ThreatEvent(
                gid=1,
                sid=event.signature_id,
                rev=1,
                message=catalog["message"],
                category=catalog["category"],
                priority=catalog["priority"],
                protocol="tcp" if event.protocol == "http" else event.protocol,
                src=src.ip,
                dst=dst.ip,
                src_port=event.src_port,
                dst_port=event.dst_port,
                observed_at_us=self.clock.now_ms() * 1000,
            )
            line = format_fast_alert(evt)
            self.alert_lines.append(line)
            parsed = parse_snort_fast_alert(line)
            disposition = self.engine.apply_threat_event(
                parsed, via=f"sensor:{sensor_id}"
            )
            dispositions.append(disposition)
        return dispositions

    def step(self, event: TrafficEvent) -> dict:
        """Process one traffic event: delivery, observation, alerts, response."""
        if event.at < self.clock.now_ms():
            raise ScenarioError("traffic event is in the simulator's past")
        self.clock.set(event.at)
        src = self._host(event.src)
        dst = self._host(event.dst)
        src_port = self.fabric.port_of(src)
        dst_port = self.fabric.port_of(dst)

        outcome: dict = {
            "index": len(self.traffic_log),
            "at": event.at,
            "src": event.src,
            "dst": event.dst,
            "protocol": event.protocol,
            "application": event.application,
            "signature_id": event.signature_id,
            "observed_by": [],
            "alert_emitted": False,
            "delivered": False,
            "throttled": False,
            "firewall": None,
            "contained": False,
            "containing_action": None,
        }

        if src_port.shut:
            # Nothing enters the fabric from a shut port.
            self.traffic_log.append(outcome)
            return outcome

        path = self.fabric.path_switches(src.switch, dst.switch)
        links = self.fabric.path_links(path) if path else []
        observer_ids = observers_for(self.fabric, src, dst)
        outcome["observed_by"] = observer_ids

        fw_verdict = self._firewall_verdict(event, src, dst, links) if path else None
        outcome["firewall"] = fw_verdict
        fw_denied = bool(fw_verdict and fw_verdict["action"] == "deny")

        delivered = (
            path is not None
            and not dst_port.shut
            and src_port.vlan == dst_port.vlan
            and not fw_denied
        )
        outcome["delivered"] = delivered
        if delivered and event.kbps is not None and src_port.rate_limit_kbps is not None:
            outcome["throttled"] = event.kbps > src_port.rate_limit_kbps

        dispositions = self._emit_alerts(event, src, dst, observer_ids)
        outcome["alert_emitted"] = bool(dispositions)
        applied = [d for d in dispositions if d["outcome"] == "applied"]
        if applied:
            outcome["contained"] = True
            outcome["containing_action"] = applied[0]["action"]["kind"]
        elif fw_denied:
            outcome["contained"] = True
            outcome["containing_action"] = "firewall-deny"

        self.traffic_log.append(outcome)
        return outcome

    # -- full run --------------------------------------------------------------

    def run(self) -> dict:
        for entry in self.scenario.script:
            if isinstance(entry, ControlEvent):
                if entry.at < self.clock.now_ms():
                    raise ScenarioError("control event is in the simulator's past")
                self.clock.set(entry.at)
                self._do_control(entry)
            else:
                self.step(entry)
        return self.report()

    def containment_summary(self) -> dict:
        summary: dict[str, dict] = {}
        for outcome in self.traffic_log:
            if outcome["signature_id"] is None:
                continue
            zone = self.fabric.zone_of_host(self._host(outcome["src"]))
            bucket = summary.setdefault(zone, {"contained": 0, "total": 0})
            bucket["total"] += 1
            if outcome["contained"]:
                bucket["contained"] += 1
        return summary

    def _latest_session_for_host(self, host_id: str):
        host = self._host(host_id)
        candidates = [
            s for s in self.engine.sessions()
            if s.location.switch_id == host.switch and s.location.port_id == host.port
        ]
        if not candidates:
            return None
        return max(candidates, key=lambda s: s.session_id)

    def _state_sequence(self, host_id: str) -> Optional[list[str]]:
        session = self._latest_session_for_host(host_id)
        if session is None:
            return None
        return ["Pending"] + [t.to_state for t in session.history]

    def check_assertion(self, assertion: dict) -> tuple[bool, str]:
        kind = assertion.get("type")
        if kind == "containment":
            zone = assertion["zone"]
            got = self.containment_summary().get(zone, {"contained": 0, "total": 0})
            want = {"contained": assertion["contained"], "total": assertion["total"]}
            return got == want, f"zone {zone}: expected {want}, got {got}"
        if kind == "session-state":
            session = self._latest_session_for_host(assertion["host"])
            got = session.state.value if session else None
            return got == assertion["state"], (
                f"host {assertion['host']}: expected {assertion['state']}, got {got}"
            )
        if kind == "state-sequence":
            got = self._state_sequence(assertion["host"])
            return got == assertion["expected"], (
                f"host {assertion['host']}: expected {assertion['expected']}, got {got}"
            )
        if kind == "alert-count":
            got = len(self.alert_lines)
            return got == assertion["expected"], f"expected {assertion['expected']} alerts, got {got}"
        if kind in ("event-delivered", "event-contained", "event-throttled"):
            field_name = kind.split("-", 1)[1]
            idx = assertion["traffic_index"]
            if idx >= len(self.traffic_log):
                return False, f"no traffic event {idx}"
            got = self.traffic_log[idx][field_name]
            return got == assertion["expected"], (
                f"traffic[{idx}].{field_name}: expected {assertion['expected']}, got {got}"
            )
        if kind == "event-observed-by":
            idx = assertion["traffic_index"]
            if idx >= len(self.traffic_log):
                return False, f"no traffic event {idx}"
            got = self.traffic_log[idx]["observed_by"]
            return got == sorted(assertion["expected"]), (
                f"traffic[{idx}].observed_by: expected {sorted(assertion['expected'])}, got {got}"
            )
        if kind == "firewall-verdict":
            idx = assertion["traffic_index"]
            if idx >= len(self.traffic_log):
                return False, f"no traffic event {idx}"
            verdict = self.traffic_log[idx]["firewall"]
            if verdict is None:
                return False, f"traffic[{idx}] crossed no firewall"
            ok = verdict["action"] == assertion["action"] and (
                "rule_id" not in assertion or verdict["rule_id"] == assertion["rule_id"]
            )
            return ok, f"traffic[{idx}].firewall: expected {assertion}, got {verdict}"
        return False, f"unknown assertion type {kind!r}"

    def report(self) -> dict:
        checks = []
        for assertion in self.scenario.assertions:
            passed, detail = self.check_assertion(assertion)
            checks.append({"assertion": assertion, "passed": passed, "detail": detail})
        return {
            "scenario": self.scenario.name,
            "traffic": self.traffic_log,
            "containment": self.containment_summary(),
            "alerts": self.alert_lines,
            "assertions": checks,
            "passed": all(c["passed"] for c in checks),
            "session_digest": self.engine.state_digest(),
        }


def run_scenario(source: Union[str, Path, dict],
                 audit: Optional[AuditLog] = None) -> dict:
    """Load, run, and report. Deterministic: identical report bytes per run."""
    scenario = load_scenario(source)
    sim = Simulation(scenario, audit=audit)
    return sim.run()


def report_to_bytes(report: dict) -> bytes:
    return json.dumps(report, sort_keys=True, indent=2).encode() + b"\n"
