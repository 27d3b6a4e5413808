"""HTTP surface of the policy server plus the syslog/file alert listeners.

Request handlers run concurrently but every mutation funnels into the engine's
single serialized queue; the audit writer is the sole file writer. All bodies
are JSON except the firewall policy document, which is the plain-text rule
grammar.
"""

from __future__ import annotations

import socket
import threading
import time
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request, Response

from .audit import AuditLog, read_audit_file
from .clock import SystemClock
from .config import ServiceConfig
from .engine import (
    AccessRequest,
    ConfigurationError,
    InvalidTransitionError,
    NacPolicy,
    PdpEngine,
    UnknownSessionError,
)
from .firewall import ResolverSnapshot, RuleParseError, load_rules, parse_rules
from .identity import Directory, GuestRegistration, load_allowlist
from .model import ModelError
from .posture import PostureError, PosturePolicy, PostureReport, ScanReport
from .threat import AlertParseError, ThreatEvent, ThreatPolicy, parse_snort_fast_alert, parse_syslog_alert


def build_engine(config: ServiceConfig, clock=None) -> PdpEngine:
    """Construct the engine from config files, replaying any existing audit
    log first (crash recovery: the log is the source of truth)."""
    existing = []
    if config.audit_log.exists():
        existing = read_audit_file(config.audit_log)
    engine = PdpEngine(
        directory=Directory.load(config.directory_file),
        allowlist=load_allowlist(config.allowlist_file) if config.allowlist_file else {},
        posture_policy=PosturePolicy.load(config.posture_policy_file),
        nac_policy=NacPolicy.load(config.nac_policy_file),
        firewall_rules=load_rules(config.firewall_rules_file),
        resolver=ResolverSnapshot.load(config.resolver_file),
        threat_policy=ThreatPolicy.load(config.threat_policy_file),
        clock=clock or SystemClock(),
        audit=AuditLog(config.audit_log),
        dedup_window_ms=config.dedup_window_ms,
        default_fw_action=config.default_firewall_action,
    )
    if existing:
        engine.restore_from_audit(existing)
    return engine


def create_app(engine: PdpEngine, config: Optional[ServiceConfig] = None) -> FastAPI:
    app = FastAPI(title="nacpdp", version="0.1.0")
    admin_token = config.admin_token if config else None

    def require_admin(x_admin_token: Optional[str] = Header(default=None)) -> None:
        if admin_token is not None and x_admin_token != admin_token:
            raise HTTPException(status_code=401, detail="admin token required")

    def session_json(session, full: bool = False) -> dict:
        doc = session.to_json()
        doc["available_actions"] = list(session.available_actions())
        doc["remediation"] = [
            item.to_json() for item in engine.remediation_items(session.session_id)
        ] if doc["state"] == "Quarantined" else []
        if not full:
            doc.pop("history", None)
        return doc

    @app.exception_handler(UnknownSessionError)
    async def _unknown_session(request: Request, exc: UnknownSessionError):
        raise HTTPException(status_code=404, detail=f"unknown session: {exc.args[0]}")

    @app.exception_handler(InvalidTransitionError)
    async def _invalid_transition(request: Request, exc: InvalidTransitionError):
        raise HTTPException(status_code=409, detail=str(exc))

    def bad_request(exc: Exception) -> HTTPException:
        return HTTPException(status_code=400, detail=str(exc))

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(engine.sessions())}

    # -- admission ---------------------------------------------------------

    @app.post("/access-requests")
    def access_request(body: dict):
        try:
            req = AccessRequest.from_json(body)
        except (KeyError, ModelError, PostureError, ValueError) as exc:
            raise bad_request(exc) from None
        decision, session = engine.handle_access_request(req)
        return {
            "decision": decision.to_json(),
            "session_id": session.session_id if session else None,
            "session": session_json(session) if session else None,
        }

    # -- sessions ------------------------------------------------------------

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": [session_json(s) for s in engine.sessions()]}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_json(engine.session(session_id), full=True)

    @app.post("/sessions/{session_id}/terminate", dependencies=[Depends(require_admin)])
    def terminate(session_id: str, body: Optional[dict] = None):
        reason = (body or {}).get("reason", "admin")
        record = engine.terminate_session(session_id, reason)
        return {"transition": record.to_json(), "session": session_json(engine.session(session_id))}

    @app.post("/sessions/{session_id}/disable", dependencies=[Depends(require_admin)])
    def disable(session_id: str, body: Optional[dict] = None):
        reason = (body or {}).get("reason", "admin")
        record = engine.disable_session(session_id, reason)
        return {"transition": record.to_json(), "session": session_json(engine.session(session_id))}

    @app.post("/sessions/{session_id}/reenable", dependencies=[Depends(require_admin)])
    def reenable(session_id: str, body: Optional[dict] = None):
        admin_id = (body or {}).get("admin_id", "admin")
        record = engine.reenable_session(session_id, admin_id)
        return {"transition": record.to_json(), "session": session_json(engine.session(session_id))}

    # -- posture / scans ------------------------------------------------------

    @app.post("/posture-reports")
    def posture_report(body: dict):
        try:
            report = PostureReport.from_json(body)
        except (KeyError, PostureError, ModelError, ValueError) as exc:
            raise bad_request(exc) from None
        outcomes = engine.submit_posture_report(report)
        return {"stored": True, "reevaluated": len(outcomes)}

    @app.post("/scan-reports")
    def scan_report(body: dict):
        try:
            scan = ScanReport.from_json(body)
        except (KeyError, PostureError, ModelError, ValueError) as exc:
            raise bad_request(exc) from None
        return engine.submit_scan_report(scan)

    # -- threat events ----------------------------------------------------------

    @app.post("/threat-events")
    def threat_event(body: dict):
        try:
            if "line" in body:
                evt = parse_snort_fast_alert(body["line"])
            else:
                evt = ThreatEvent.from_json(body)
        except (KeyError, AlertParseError, ValueError) as exc:
            raise bad_request(exc) from None
        return engine.apply_threat_event(evt, via="api")

    # -- policies ------------------------------------------------------------------

    @app.get("/policies/firewall")
    def get_firewall_policy():
        return Response(content=engine.firewall_rules.to_document(), media_type="text/plain")

    @app.put("/policies/firewall")
    async def put_firewall_policy(request: Request):
        raw = await request.body()
        try:
            ruleset = parse_rules(raw.decode("utf-8"))
        except RuleParseError as exc:
            raise HTTPException(
                status_code=400,
                detail={
                    "errors": [
                        {"line": line, "field": fieldname, "message": message}
                        for line, fieldname, message in exc.errors
                    ]
                },
            ) from None
        engine.swap_policy("firewall", ruleset)
        return {"applied": True, "rules": len(ruleset)}

    @app.get("/policies/threat")
    def get_threat_policy():
        return engine.threat_policy.to_json()

    @app.put("/policies/threat")
    def put_threat_policy(body: dict):
        try:
            policy = ThreatPolicy.from_json(body)
        except (KeyError, ValueError) as exc:
            raise bad_request(exc) from None
        engine.swap_policy("threat", policy)
        return {"applied": True, "clauses": len(policy.clauses)}

    @app.get("/policies/posture")
    def get_posture_policy():
        return engine.posture_policy.to_json()

    @app.put("/policies/posture")
    def put_posture_policy(body: dict):
        try:
            policy = PosturePolicy.from_json(body)
        except (KeyError, PostureError, ValueError) as exc:
            raise bad_request(exc) from None
        engine.swap_policy("posture", policy)
        return {"applied": True, "requirements": len(policy.requirements)}

    @app.get("/policies/nac")
    def get_nac_policy():
        return engine.nac_policy.to_json()

    @app.put("/policies/nac")
    def put_nac_policy(body: dict):
        try:
            policy = NacPolicy.from_json(body)
        except (KeyError, ValueError, ConfigurationError) as exc:
            raise bad_request(exc) from None
        engine.swap_policy("nac", policy)
        return {"applied": True}

    # -- audit ------------------------------------------------------------------

    @app.get("/audit")
    def get_audit(since: int = Query(default=0, ge=0)):
        return {"records": [env.to_json() for env in engine.audit.records(since_seq=since)]}

    # -- captive portal ------------------------------------------------------------

    @app.post("/portal/register")
    def portal_register(body: dict):
        try:
            reg = GuestRegistration.from_json(body)
            identity, credential = engine.register_guest(reg)
        except (KeyError, ModelError, ValueError) as exc:
            raise bad_request(exc) from None
        return {
            "user_id": identity.user_id,
            "token": credential.secret,
            "roles": list(identity.roles),
        }

    @app.post("/portal/remediate/{session_id}/{check_id}")
    def portal_remediate(session_id: str, check_id: str):
        try:
            result = engine.remediate(session_id, check_id)
        except PostureError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        session = engine.session(session_id)
        return {"result": result, "session": session_json(session)}

    return app


class SyslogListener:
    """UDP listener feeding snort-over-syslog datagrams into threat control."""

    def __init__(self, engine: PdpEngine, port: int, host: str = "127.0.0.1"):
        self.engine = engine
        self.host = host
        self.port = port
        self._sock: Optional[socket.socket] = None
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()

    def start(self) -> int:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((self.host, self.port))
        self._sock.settimeout(0.2)
        self.port = self._sock.getsockname()[1]
        self._thread = threading.Thread(target=self._loop, name="syslog-listener", daemon=True)
        self._thread.start()
        return self.port

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                datagram, _ = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                alert = parse_syslog_alert(datagram)
            except AlertParseError:
                continue
            self.engine.apply_threat_event(
                alert.event,
                via="syslog",
                transport={"pri": alert.pri, "host": alert.host,
                           "timestamp": alert.timestamp},
            )

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)
        if self._sock is not None:
            self._sock.close()


class AlertFileTail:
    """Polls an IDS alert file for appended fast-alert lines."""

    def __init__(self, engine: PdpEngine, path: Path, poll_s: float = 0.2):
        self.engine = engine
        self.path = Path(path)
        self.poll_s = poll_s
        self._offset = 0
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()

    def start(self, from_start: bool = False) -> None:
        if not from_start and self.path.exists():
            self._offset = self.path.stat().st_size
        self._thread = threading.Thread(target=self._loop, name="alert-tail", daemon=True)
        self._thread.start()

    def poll_once(self) -> int:
        """Read and ingest any new complete lines; returns how many."""
        if not self.path.exists():
            return 0
        size = self.path.stat().st_size
        if size < self._offset:
            self._offset = 0  # truncated/rotated
        if size == self._offset:
            return 0
        with open(self.path, "r", encoding="utf-8") as fh:
            fh.seek(self._offset)
            chunk = fh.read()
        consumed = len(chunk) - len(chunk.rsplit("\n", 1)[-1])
        self._offset += consumed
        count = 0
        for line in chunk[:consumed].splitlines():
            if not line.strip():
                continue
            try:
                evt = parse_snort_fast_alert(line)
            except AlertParseError:
                continue
            self.engine.apply_threat_event(evt, via="file")
            count += 1
        return count

    def _loop(self) -> None:
        while not self._stop.is_set():
            self.poll_once()
            time.sleep(self.poll_s)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)


def serve(config: ServiceConfig) -> None:
    """Build everything from config and block serving HTTP."""
    import uvicorn

    engine = build_engine(config)
    app = create_app(engine, config)
    listeners = []
    if config.syslog_udp_port is not None:
        listener = SyslogListener(engine, config.syslog_udp_port, host=config.listen_host)
        listener.start()
        listeners.append(listener)
    if config.alert_file is not None:
        tail = AlertFileTail(engine, config.alert_file)
        tail.start()
        listeners.append(tail)
    try:
        uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="warning")
    finally:
        for listener in listeners:
            listener.stop()
