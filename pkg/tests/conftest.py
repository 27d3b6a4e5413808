from __future__ import annotations

import json

import pytest

from nacpdp.clock import VirtualClock
from nacpdp.engine import AccessRequest, NacPolicy, PdpEngine
from nacpdp.firewall import parse_rules
from nacpdp.identity import Credential, Directory, DirectoryRecord, make_verifier
from nacpdp.model import DeviceDescriptor, NetworkLocation
from nacpdp.posture import PosturePolicy, PostureReport

# Low iteration count keeps fixture hashing fast; the verifier format is the
# same one production uses.
ITERATIONS = 10

LAPTOP_MAC = "aa:bb:cc:00:00:01"
IPAD_MAC = "aa:bb:cc:00:00:02"
PRINTER_MAC = "aa:bb:cc:00:00:0f"

COMPLIANT_CHECKS = {"av_signature_age_days": 0, "firewall_enabled": True}
STALE_AV_CHECKS = {"av_signature_age_days": 30, "firewall_enabled": True}


def verifier(secret: str) -> str:
    return make_verifier(secret, iterations=ITERATIONS)


def make_directory() -> Directory:
    return Directory(
        [
            DirectoryRecord(user_id="alice", secret_verifier=verifier("alice-pw"),
                            roles=("staff",), display_name="Alice"),
            DirectoryRecord(user_id="bob", secret_verifier=verifier("bob-pw"),
                            roles=("engineering", "staff"), display_name="Bob"),
            DirectoryRecord(user_id="carol", secret_verifier=verifier("carol-pw"),
                            roles=("staff",), enabled=False, display_name="Carol"),
        ]
    )


def make_posture_policy() -> PosturePolicy:
    return PosturePolicy.from_json(
        {
            "requirements": [
                {"id": "update-av", "check": "av_signature_age_days", "op": "<=",
                 "threshold": 7, "severity": "mandatory",
                 "instruction": "Update antivirus signatures"},
                {"id": "fw-on", "check": "firewall_enabled", "op": "=",
                 "threshold": True, "severity": "mandatory",
                 "instruction": "Enable the host firewall"},
                {"id": "patched", "check": "patch_level", "op": ">=",
                 "threshold": 10, "severity": "advisory",
                 "instruction": "Install pending patches"},
            ],
            "critical_threshold": 7.0,
        }
    )


def make_nac_policy() -> NacPolicy:
    return NacPolicy(
        role_vlans={"staff": 20, "engineering": 21, "guest": 30, "printer": 40},
        quarantine_vlan=99,
        registration_vlan=98,
    )


@pytest.fixture
def clock() -> VirtualClock:
    return VirtualClock(1_000_000)


@pytest.fixture
def directory() -> Directory:
    return make_directory()


@pytest.fixture
def allowlist() -> dict:
    return {PRINTER_MAC: "printer"}


@pytest.fixture
def posture_policy() -> PosturePolicy:
    return make_posture_policy()


@pytest.fixture
def nac_policy() -> NacPolicy:
    return make_nac_policy()


def make_engine(clock, directory=None, allowlist=None, audit=None, command_sink=None,
                **overrides) -> PdpEngine:
    return PdpEngine(
        directory=directory if directory is not None else make_directory(),
        allowlist=allowlist if allowlist is not None else {PRINTER_MAC: "printer"},
        posture_policy=overrides.pop("posture_policy", make_posture_policy()),
        nac_policy=overrides.pop("nac_policy", make_nac_policy()),
        firewall_rules=overrides.pop("firewall_rules", parse_rules("* * * * any * permit\n")),
        clock=clock,
        audit=audit,
        command_sink=command_sink,
        **overrides,
    )


@pytest.fixture
def engine(clock, directory, allowlist) -> PdpEngine:
    return make_engine(clock, directory=directory, allowlist=allowlist)


def request_for(user: str, secret: str, *, mac: str = LAPTOP_MAC, port: str = "p1",
                checks=COMPLIANT_CHECKS, device_class: str = "laptop",
                method: str = "password", zone: str = "lan",
                at: int = 1_000_000) -> AccessRequest:
    device = DeviceDescriptor(mac=mac, device_class=device_class)
    posture = None
    if checks is not None:
        posture = PostureReport(device=device, checks=dict(checks), collected_at=at)
    if method == "mac-only":
        cred = Credential(method="mac-only", principal=mac)
    else:
        cred = Credential(method=method, principal=user, secret=secret)
    return AccessRequest(
        cred=cred,
        device=device,
        location=NetworkLocation(zone=zone, switch_id="sw1", port_id=port),
        posture=posture,
        requested_at=at,
    )


def write_service_fixtures(tmp_path, *, admin_token=None, syslog_port=None,
                           alert_file=None, default_action="deny") -> str:
    """Write a complete config directory for service tests; returns the
    config path."""
    directory = make_directory()
    directory.dump(tmp_path / "directory.jsonl")
    (tmp_path / "allowlist.json").write_text(json.dumps({PRINTER_MAC: "printer"}))
    (tmp_path / "posture.json").write_text(json.dumps(make_posture_policy().to_json()))
    (tmp_path / "nac.json").write_text(json.dumps(make_nac_policy().to_json()))
    (tmp_path / "rules.txt").write_text(
        "Guest iPAD * www.msn.com http msn deny\n* * * * any * permit\n"
    )
    (tmp_path / "threat.json").write_text(json.dumps({
        "clauses": [
            {"match": {"category": "Attempted Recon"}, "action": {"kind": "quarantine-vlan"}},
        ]
    }))
    (tmp_path / "resolver.json").write_text(json.dumps({
        "www.msn.com": ["204.79.197.200", "204.79.197.201"],
    }))
    config = {
        "listen": "127.0.0.1:8080",
        "directory_file": "directory.jsonl",
        "allowlist_file": "allowlist.json",
        "posture_policy_file": "posture.json",
        "nac_policy_file": "nac.json",
        "firewall_rules_file": "rules.txt",
        "threat_policy_file": "threat.json",
        "resolver_file": "resolver.json",
        "audit_log": "audit.jsonl",
        "dedup_window_ms": 60000,
        "default_firewall_action": default_action,
    }
    if admin_token:
        config["admin_token"] = admin_token
    if syslog_port is not None:
        config["syslog_udp_port"] = syslog_port
    if alert_file is not None:
        config["alert_file"] = alert_file
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)
