"""Service configuration.

A JSON document naming the policy inputs, listeners and the audit log. Every
referenced file must exist at startup; VLAN distinctness is enforced when the
NAC policy loads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    listen_host: str
    listen_port: int
    directory_file: Path
    posture_policy_file: Path
    nac_policy_file: Path
    firewall_rules_file: Path
    threat_policy_file: Path
    resolver_file: Path
    audit_log: Path
    allowlist_file: Optional[Path] = None
    alert_file: Optional[Path] = None
    syslog_udp_port: Optional[int] = None
    dedup_window_ms: int = 60_000
    default_firewall_action: str = "deny"
    admin_token: Optional[str] = None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ServiceConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = path.parent

        def resolve(key: str, required: bool = True) -> Optional[Path]:
            value = doc.get(key)
            if value is None:
                if required:
                    raise ConfigError(f"config missing required key {key!r}")
                return None
            resolved = (base / value).resolve() if not Path(value).is_absolute() else Path(value)
            return resolved

        listen = doc.get("listen", "127.0.0.1:8080")
        host, _, port = listen.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"bad listen address {listen!r} (want host:port)")

        cfg = cls(
            listen_host=host,
            listen_port=int(port),
            directory_file=resolve("directory_file"),
            allowlist_file=resolve("allowlist_file", required=False),
            posture_policy_file=resolve("posture_policy_file"),
            nac_policy_file=resolve("nac_policy_file"),
            firewall_rules_file=resolve("firewall_rules_file"),
            threat_policy_file=resolve("threat_policy_file"),
            resolver_file=resolve("resolver_file"),
            audit_log=resolve("audit_log"),
            alert_file=resolve("alert_file", required=False),
            syslog_udp_port=doc.get("syslog_udp_port"),
            dedup_window_ms=int(doc.get("dedup_window_ms", 60_000)),
            default_firewall_action=doc.get("default_firewall_action", "deny"),
            admin_token=doc.get("admin_token"),
        )
        if cfg.default_firewall_action not in ("permit", "deny"):
            raise ConfigError(
                f"default_firewall_action must be permit or deny, got {cfg.default_firewall_action!r}"
            )
        for name in ("directory_file", "posture_policy_file", "nac_policy_file",
                     "firewall_rules_file", "threat_policy_file", "resolver_file"):
            file_path = getattr(cfg, name)
            if not file_path.exists():
                raise ConfigError(f"{name} does not exist: {file_path}")
        if cfg.allowlist_file is not None and not cfg.allowlist_file.exists():
            raise ConfigError(f"allowlist_file does not exist: {cfg.allowlist_file}")
        return cfg
