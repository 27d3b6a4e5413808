from __future__ import annotations

import itertools
import json
import random
from pathlib import Path

import pytest

from nacpdp.audit import AuditLog, verify_gap_free
from nacpdp.engine import replay_sessions
from nacpdp.sim import (
    ScenarioError,
    Simulation,
    Topology,
    load_scenario,
    observers_for,
    report_to_bytes,
    run_scenario,
)

from .oracles import oracle_observers

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "src" / "nacpdp" / "scenarios"


def scenario_path(name: str) -> str:
    return str(SCENARIO_DIR / f"{name}.json")


class TestLoad:
    def test_bundled_dmz_scenario(self):
        scenario = load_scenario(scenario_path("dmz_figure7"))
        topo = scenario.topology
        assert set(topo.zones) == {"dmz1", "dmz2", "lan"}
        taps = [s for s in topo.sensors if s.kind == "ids-tap"]
        inlines = [s for s in topo.sensors if s.kind == "inline-ips"]
        assert len(taps) == 1 and taps[0].zone == "dmz1"
        assert len(inlines) == 1 and inlines[0].link == frozenset({"d2", "core"})

    def test_empty_script_empty_report(self):
        doc = json.loads(Path(scenario_path("dmz_figure7")).read_text())
        doc["script"] = []
        doc["assertions"] = []
        report = run_scenario(doc)
        assert report["traffic"] == [] and report["containment"] == {}
        assert report["passed"] is True

    def test_tap_on_unknown_zone(self):
        doc = json.loads(Path(scenario_path("dmz_figure7")).read_text())
        doc["topology"]["sensors"][0]["zone"] = "dmz9"
        with pytest.raises(ScenarioError, match="zone"):
            load_scenario(doc)

    def test_host_on_unknown_port(self):
        doc = json.loads(Path(scenario_path("dmz_figure7")).read_text())
        doc["topology"]["hosts"]["web1"]["port"] = "p9"
        with pytest.raises(ScenarioError, match="unknown port"):
            load_scenario(doc)

    def test_out_of_order_script(self):
        doc = json.loads(Path(scenario_path("dmz_figure7")).read_text())
        doc["script"][-1] = dict(doc["script"][-1], at=0)
        with pytest.raises(ScenarioError, match="non-decreasing"):
            load_scenario(doc)

    def test_unknown_script_host(self):
        doc = json.loads(Path(scenario_path("dmz_figure7")).read_text())
        doc["script"].append({"at": 99, "src": "nobody", "dst": "web1"})
        with pytest.raises(ScenarioError, match="unknown host"):
            load_scenario(doc)

    def test_icmp_event_with_ports_rejected(self):
        doc = json.loads(Path(scenario_path("dmz_figure7")).read_text())
        doc["script"].append({"at": 99, "src": "web1", "dst": "web2",
                              "protocol": "icmp", "src_port": 1})
        with pytest.raises(ScenarioError, match="icmp"):
            load_scenario(doc)


class TestFigure7:
    def test_containment_asymmetry(self):
        report = run_scenario(scenario_path("dmz_figure7"))
        assert report["passed"], [c["detail"] for c in report["assertions"] if not c["passed"]]
        assert report["containment"]["dmz1"] == {"contained": 1, "total": 1}
        assert report["containment"]["dmz2"] == {"contained": 0, "total": 1}

    def test_attack_chain_is_synchronous(self):
        """Tap observation, alert, correlation and termination happen within
        the same step."""
        scenario = load_scenario(scenario_path("dmz_figure7"))
        sim = Simulation(scenario)
        for entry in scenario.script[:5]:
            if hasattr(entry, "action"):
                sim.clock.set(entry.at)
                sim._do_control(entry)
            else:
                outcome = sim.step(entry)
        assert outcome["contained"] is True
        assert outcome["containing_action"] == "terminate-session"
        victim = sim.engine.session_by_ip("10.1.1.5")
        assert victim is None  # terminated, no longer live

    def test_report_is_byte_identical_across_runs(self):
        first = report_to_bytes(run_scenario(scenario_path("dmz_figure7")))
        second = report_to_bytes(run_scenario(scenario_path("dmz_figure7")))
        assert first == second

    def test_audit_replay_of_scenario(self):
        audit = AuditLog()
        run_scenario(scenario_path("dmz_figure7"), audit=audit)
        records = audit.records()
        verify_gap_free(records)
        rebuilt = replay_sessions(records)
        assert {s.state.value for s in rebuilt.values()} == {"Active", "Terminated"}


class TestOtherScenarios:
    def test_guest_onboarding(self):
        report = run_scenario(scenario_path("guest_onboarding"))
        assert report["passed"], [c["detail"] for c in report["assertions"] if not c["passed"]]

    def test_remediation_loop(self):
        audit = AuditLog()
        report = run_scenario(scenario_path("remediation_loop"), audit=audit)
        assert report["passed"], [c["detail"] for c in report["assertions"] if not c["passed"]]
        transitions = [
            (env.payload["from"], env.payload["to"])
            for env in audit.records()
            if env.kind == "session-transition"
        ]
        assert transitions == [("Pending", "Quarantined"), ("Quarantined", "Active")]


class TestEnforcementSemantics:
    @pytest.fixture
    def base_doc(self):
        return json.loads(Path(scenario_path("dmz_figure7")).read_text())

    def test_quarantine_vlan_isolates_layer2(self, base_doc):
        """After the port moves to the quarantine VLAN, traffic from it no
        longer reaches the old segment."""
        base_doc["script"].append(
            {"at": 30, "src": "web1", "dst": "web2", "protocol": "tcp",
             "application": "files"}
        )
        base_doc["assertions"] = [
            {"type": "event-delivered", "traffic_index": 0, "expected": True},
            {"type": "event-delivered", "traffic_index": 2, "expected": False},
        ]
        report = run_scenario(base_doc)
        assert report["passed"], [c["detail"] for c in report["assertions"] if not c["passed"]]

    def test_benign_event_observed_but_no_alert(self, base_doc):
        base_doc["script"] = base_doc["script"][:4] + [
            {"at": 10, "src": "web1", "dst": "web2", "protocol": "tcp",
             "application": "files"}
        ]
        base_doc["assertions"] = []
        report = run_scenario(base_doc)
        entry = report["traffic"][0]
        assert entry["observed_by"] == ["ids-dmz1"]
        assert entry["alert_emitted"] is False
        assert entry["delivered"] is True

    def test_no_sensors_no_containment(self, base_doc):
        base_doc["topology"]["sensors"] = []
        base_doc["assertions"] = []
        report = run_scenario(base_doc)
        assert report["containment"]["dmz1"] == {"contained": 0, "total": 1}
        assert report["containment"]["dmz2"] == {"contained": 0, "total": 1}

    def test_rate_limit_flags_flows_above_limit(self, base_doc):
        base_doc["policies"]["threat"]["clauses"] = [
            {"match": {"sid": 2100498}, "action": {"kind": "rate-limit", "rate_kbps": 512}}
        ]
        base_doc["script"] = base_doc["script"][:5] + [
            {"at": 30, "src": "web1", "dst": "web2", "protocol": "tcp",
             "application": "video", "kbps": 1000},
            {"at": 31, "src": "web1", "dst": "web2", "protocol": "tcp",
             "application": "ssh", "kbps": 100},
        ]
        base_doc["assertions"] = []
        report = run_scenario(base_doc)
        assert report["traffic"][1]["throttled"] is True
        assert report["traffic"][2]["throttled"] is False

    def test_inline_ips_blind_spot_generalizes(self, base_doc):
        """Intra-zone events in a tap-less zone are observed by nobody."""
        base_doc["assertions"] = []
        report = run_scenario(base_doc)
        assert report["traffic"][1]["observed_by"] == []


def random_topology(rng: random.Random) -> Topology:
    """Small random tree of switches with hosts, taps and inline sensors."""
    n_switches = rng.randint(2, 4)
    switches = {f"sw{i}": {"ports": {f"p{j}": 10 for j in range(3)}}
                for i in range(n_switches)}
    links = [[f"sw{i}", f"sw{rng.randrange(i)}"] for i in range(1, n_switches)]
    zone_names = ["lan", "dmz1", "dmz2", "guest"]
    zones: dict[str, list] = {}
    for i in range(n_switches):
        zone = rng.choice(zone_names)
        zones.setdefault(zone, []).append(f"sw{i}")
    n_hosts = rng.randint(2, 6)
    hosts = {}
    for h in range(n_hosts):
        sw = rng.randrange(n_switches)
        hosts[f"h{h}"] = {
            "switch": f"sw{sw}",
            "port": f"p{rng.randrange(3)}",
            "ip": f"10.0.{sw}.{h + 1}",
            "mac": f"aa:00:00:00:09:{h:02x}",
        }
    sensors = []
    for zone in zones:
        if rng.random() < 0.6:
            sensors.append({"id": f"tap-{zone}", "type": "ids-tap", "zone": zone,
                            "signatures": []})
    for i, link in enumerate(links):
        if rng.random() < 0.6:
            sensors.append({"id": f"ips-{i}", "type": "inline-ips", "link": link,
                            "signatures": []})
    return Topology({
        "switches": switches,
        "links": links,
        "zones": zones,
        "hosts": hosts,
        "sensors": sensors,
        "signatures": {},
        "firewalls": [],
    })


def test_same_segment_events_invisible_to_inline_sensors():
    """Generalized blind spot: traffic that never leaves its switch crosses no
    link, so only a tap on the zone can observe it; with no tap there,
    observed_by is empty."""
    rng = random.Random(909)
    checked = 0
    for _ in range(60):
        topo = random_topology(rng)
        tapped_zones = {s.zone for s in topo.sensors if s.kind == "ids-tap"}
        for src_id, dst_id in itertools.permutations(topo.hosts, 2):
            src, dst = topo.hosts[src_id], topo.hosts[dst_id]
            if src.switch != dst.switch:
                continue
            observed = observers_for(topo, src, dst)
            assert all(o.startswith("tap-") for o in observed)
            if topo.zone_of_switch(src.switch) not in tapped_zones:
                assert observed == []
                checked += 1
    assert checked > 5


def test_report_containment_implies_alert_or_firewall_deny():
    for name in ("dmz_figure7", "guest_onboarding", "remediation_loop"):
        report = run_scenario(scenario_path(name))
        for entry in report["traffic"]:
            if entry["contained"]:
                fw_denied = entry["firewall"] is not None and \
                    entry["firewall"]["action"] == "deny"
                assert entry["alert_emitted"] or fw_denied


def test_visibility_matches_brute_force_oracle():
    """All (placement, src, dst) triples on random small topologies."""
    rng = random.Random(4242)
    mismatches = 0
    for _ in range(40):
        topo = random_topology(rng)
        for src_id, dst_id in itertools.permutations(topo.hosts, 2):
            got = observers_for(topo, topo.hosts[src_id], topo.hosts[dst_id])
            want = oracle_observers(topo, src_id, dst_id)
            if got != want:
                mismatches += 1
    assert mismatches == 0


def test_delivery_set_subset_of_same_vlan_ports():
    """Layer-2 isolation: after a quarantine VLAN move, events from the port
    are deliverable only to ports on the quarantine VLAN."""
    doc = json.loads(Path(scenario_path("dmz_figure7")).read_text())
    scenario = load_scenario(doc)
    sim = Simulation(scenario)
    for entry in scenario.script:
        if hasattr(entry, "action"):
            sim.clock.set(entry.at)
            sim._do_control(entry)
        else:
            sim.step(entry)
    # web1's port is now on VLAN 99; enumerate delivery against every host.
    src = sim.fabric.hosts["web1"]
    assert sim.fabric.port_of(src).vlan == 99
    t = sim.clock.now_ms()
    for host_id, host in sim.fabric.hosts.items():
        if host_id == "web1":
            continue
        t += 1
        from nacpdp.sim import TrafficEvent

        outcome = sim.step(TrafficEvent(at=t, src="web1", dst=host_id))
        if outcome["delivered"]:
            assert sim.fabric.port_of(host).vlan == 99
        else:
            assert sim.fabric.port_of(host).vlan != 99
