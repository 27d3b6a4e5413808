from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nacpdp.engine import SessionState
from nacpdp.threat import (
    AlertParseError,
    CorrelationIntegrityError,
    CtcAction,
    ThreatEvent,
    ThreatPolicy,
    correlate,
    format_fast_alert,
    match_clause,
    parse_snort_fast_alert,
    parse_syslog_alert,
    select_action,
)

from .conftest import make_engine, request_for

SPEC_LINE = (
    "01/11-13:04:31.541012 [**] [1:2100498:7] GPL SCAN probe [**] "
    "[Classification: Attempted Recon] [Priority: 2] {TCP} 10.1.1.5:4444 -> 10.2.2.9:80"
)


class TestFastAlertParser:
    def test_reference_line(self):
        evt = parse_snort_fast_alert(SPEC_LINE)
        assert evt.sig == (1, 2100498, 7)
        assert evt.message == "GPL SCAN probe"
        assert evt.category == "Attempted Recon"
        assert evt.priority == 2
        assert evt.protocol == "tcp"
        assert (evt.src, evt.src_port) == ("10.1.1.5", 4444)
        assert (evt.dst, evt.dst_port) == ("10.2.2.9", 80)

    def test_icmp_line_without_ports(self):
        line = ("02/28-23:59:59.000001 [**] [1:408:5] ICMP Echo Reply [**] "
                "[Classification: Misc activity] [Priority: 3] {ICMP} 10.0.0.1 -> 10.0.0.2")
        evt = parse_snort_fast_alert(line)
        assert evt.protocol == "icmp"
        assert evt.src_port is None and evt.dst_port is None

    def test_icmp_with_ports_rejected(self):
        line = ("02/28-23:59:59.000001 [**] [1:408:5] ICMP Echo Reply [**] "
                "[Classification: Misc activity] [Priority: 3] {ICMP} 10.0.0.1:1 -> 10.0.0.2:2")
        with pytest.raises(AlertParseError):
            parse_snort_fast_alert(line)

    def test_missing_priority_is_an_error(self):
        line = ("01/11-13:04:31.541012 [**] [1:2100498:7] GPL SCAN probe [**] "
                "[Classification: Attempted Recon] {TCP} 10.1.1.5:4444 -> 10.2.2.9:80")
        with pytest.raises(AlertParseError) as exc:
            parse_snort_fast_alert(line)
        assert "[Priority: N]" in str(exc.value)
        assert exc.value.column > 1

    def test_empty_line(self):
        with pytest.raises(AlertParseError):
            parse_snort_fast_alert("   ")

    def test_trailing_garbage(self):
        with pytest.raises(AlertParseError):
            parse_snort_fast_alert(SPEC_LINE + " extra")

    def test_bad_date_component(self):
        line = SPEC_LINE.replace("01/11", "02/30")
        with pytest.raises(AlertParseError):
            parse_snort_fast_alert(line)

    def test_column_position_points_at_failure(self):
        with pytest.raises(AlertParseError) as exc:
            parse_snort_fast_alert("01/11-13:04:31.541012 nonsense")
        assert exc.value.column == 22

    def test_round_trip_of_reference_line(self):
        evt = parse_snort_fast_alert(SPEC_LINE)
        assert format_fast_alert(evt) == SPEC_LINE
        assert parse_snort_fast_alert(format_fast_alert(evt)) == evt


event_strategy = st.builds(
    ThreatEvent,
    gid=st.integers(min_value=1, max_value=999),
    sid=st.integers(min_value=1, max_value=9_999_999),
    rev=st.integers(min_value=0, max_value=99),
    message=st.text(
        alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), whitelist_characters=" -_"),
        min_size=1, max_size=40,
    ).map(lambda s: s.strip() or "msg"),
    category=st.text(
        alphabet=st.characters(whitelist_categories=("Lu", "Ll"), whitelist_characters=" -"),
        min_size=1, max_size=30,
    ).map(lambda s: s.strip() or "Misc"),
    priority=st.integers(min_value=1, max_value=5),
    protocol=st.sampled_from(["tcp", "udp"]),
    src=st.sampled_from(["10.0.0.1", "192.168.5.77", "172.16.0.9"]),
    dst=st.sampled_from(["10.0.0.2", "8.8.8.8"]),
    src_port=st.one_of(st.none(), st.integers(min_value=1, max_value=65535)),
    dst_port=st.one_of(st.none(), st.integers(min_value=1, max_value=65535)),
    observed_at_us=st.integers(min_value=0, max_value=363 * 24 * 3600 * 1_000_000),
)


@given(event_strategy)
def test_parser_round_trip_property(evt):
    line = format_fast_alert(evt)
    assert parse_snort_fast_alert(line) == evt


class TestSyslogIngestion:
    def test_datagram(self):
        datagram = f"<33>Jan 11 13:04:31 sensor01 snort: {SPEC_LINE}".encode()
        alert = parse_syslog_alert(datagram)
        assert alert.pri == 33
        assert alert.host == "sensor01"
        assert alert.event == parse_snort_fast_alert(SPEC_LINE)

    def test_non_snort_datagram_rejected(self):
        with pytest.raises(AlertParseError):
            parse_syslog_alert("<33>Jan 11 13:04:31 sensor01 sshd: something")


class TestDedupKey:
    def test_same_line_same_key(self):
        a = parse_snort_fast_alert(SPEC_LINE)
        b = parse_snort_fast_alert(SPEC_LINE)
        assert a.dedup_key() == b.dedup_key()

    def test_key_changes_across_window_buckets(self):
        evt = parse_snort_fast_alert(SPEC_LINE)
        shifted = ThreatEvent.from_json(
            dict(evt.to_json(), observed_at_us=evt.observed_at_us + 61_000_000)
        )
        assert evt.dedup_key(60_000) != shifted.dedup_key(60_000)

    def test_key_depends_on_signature_and_endpoints(self):
        evt = parse_snort_fast_alert(SPEC_LINE)
        other = ThreatEvent.from_json(dict(evt.to_json(), sid=999))
        assert evt.dedup_key() != other.dedup_key()


class TestCorrelate:
    def test_unique_live_session(self, clock):
        engine = make_engine(clock)
        _, session = engine.handle_access_request(request_for("alice", "alice-pw"))
        evt = ThreatEvent.from_json(
            dict(parse_snort_fast_alert(SPEC_LINE).to_json(), src=session.ip)
        )
        assert correlate(evt, engine.live_sessions()) == session.session_id

    def test_no_session_for_external_source(self, clock):
        engine = make_engine(clock)
        engine.handle_access_request(request_for("alice", "alice-pw"))
        evt = parse_snort_fast_alert(SPEC_LINE)
        assert correlate(evt, engine.live_sessions()) is None

    def test_terminated_sessions_ignored(self, clock):
        engine = make_engine(clock)
        _, session = engine.handle_access_request(request_for("alice", "alice-pw"))
        engine.terminate_session(session.session_id, "test")
        evt = ThreatEvent.from_json(
            dict(parse_snort_fast_alert(SPEC_LINE).to_json(), src=session.ip)
        )
        assert correlate(evt, engine.live_sessions()) is None

    def test_duplicate_live_ip_is_integrity_error(self):
        class Stub:
            def __init__(self, sid, ip, live=True):
                self.session_id = sid
                self.ip = ip
                self.is_live = live

        evt = parse_snort_fast_alert(SPEC_LINE)
        sessions = [Stub("a", evt.src), Stub("b", evt.src)]
        with pytest.raises(CorrelationIntegrityError):
            correlate(evt, sessions)

    def test_agrees_with_linear_scan_oracle(self, clock):
        from .oracles import oracle_correlate

        rng = random.Random(99)
        engine = make_engine(clock)
        users = [("alice", "alice-pw"), ("bob", "bob-pw")]
        for i, (user, pw) in enumerate(users):
            engine.handle_access_request(
                request_for(user, pw, mac=f"aa:bb:cc:00:01:{i:02x}", port=f"p{i}")
            )
        sessions = engine.sessions()
        base = parse_snort_fast_alert(SPEC_LINE).to_json()
        for _ in range(200):
            src = rng.choice([s.ip for s in sessions] + ["9.9.9.9", "1.2.3.4"])
            evt = ThreatEvent.from_json(dict(base, src=src))
            got = correlate(evt, engine.live_sessions())
            want = oracle_correlate(evt, sessions)
            assert got == (want[0] if want else None)


class TestPolicyClauses:
    def test_category_clause_selects_action(self):
        policy = ThreatPolicy.from_json({
            "clauses": [
                {"match": {"category": "Attempted Recon"},
                 "action": {"kind": "quarantine-vlan"}},
            ]
        })
        evt = parse_snort_fast_alert(SPEC_LINE)
        action = select_action(evt, policy)
        assert action is not None and action.kind.value == "quarantine-vlan"

    def test_empty_policy_matches_nothing(self):
        evt = parse_snort_fast_alert(SPEC_LINE)
        assert select_action(evt, ThreatPolicy(clauses=())) is None

    def test_priority_gate(self):
        policy = ThreatPolicy.from_json({
            "clauses": [
                {"match": {"max_priority": 1}, "action": {"kind": "terminate-session"}},
            ]
        })
        evt = parse_snort_fast_alert(SPEC_LINE)  # priority 2
        assert select_action(evt, policy) is None
        urgent = ThreatEvent.from_json(dict(evt.to_json(), priority=1))
        assert select_action(urgent, policy) is not None

    def test_first_match_order(self):
        policy = ThreatPolicy.from_json({
            "clauses": [
                {"match": {"protocol": "tcp"}, "action": {"kind": "rate-limit", "rate_kbps": 512}},
                {"match": {"category": "Attempted Recon"},
                 "action": {"kind": "terminate-session"}},
            ]
        })
        evt = parse_snort_fast_alert(SPEC_LINE)
        assert match_clause(evt, policy) == 0

    def test_prefix_and_port_matching(self):
        policy = ThreatPolicy.from_json({
            "clauses": [
                {"match": {"src_prefix": "10.1.0.0/16", "port": 80},
                 "action": {"kind": "disable-until-admin"}},
            ]
        })
        evt = parse_snort_fast_alert(SPEC_LINE)
        assert match_clause(evt, policy) == 0
        moved = ThreatEvent.from_json(dict(evt.to_json(), src="10.9.0.1"))
        assert match_clause(moved, policy) is None

    def test_clause_requires_a_match_field(self):
        with pytest.raises(ValueError):
            ThreatPolicy.from_json({"clauses": [{"match": {}, "action": {"kind": "terminate-session"}}]})

    def test_rate_limit_validation(self):
        with pytest.raises(ValueError):
            CtcAction(kind="rate-limit", rate_kbps=0)
        with pytest.raises(ValueError):
            CtcAction(kind="role-change", denied_applications=())


class TestApplyThroughEngine:
    def _armed_engine(self, clock, action: dict):
        from nacpdp.threat import ThreatPolicy as TP

        engine = make_engine(clock)
        engine.threat_policy = TP.from_json({
            "clauses": [{"match": {"sid": 2100498}, "action": action}]
        })
        _, session = engine.handle_access_request(request_for("alice", "alice-pw"))
        return engine, session

    def _alert_for(self, session):
        evt = parse_snort_fast_alert(SPEC_LINE)
        return ThreatEvent.from_json(dict(evt.to_json(), src=session.ip))

    def test_terminate_on_active(self, clock):
        engine, session = self._armed_engine(clock, {"kind": "terminate-session"})
        disposition = engine.apply_threat_event(self._alert_for(session))
        assert disposition["outcome"] == "applied"
        assert engine.session(session.session_id).state == SessionState.TERMINATED

    def test_duplicate_within_window_suppressed(self, clock):
        engine, session = self._armed_engine(clock, {"kind": "quarantine-vlan"})
        evt = self._alert_for(session)
        first = engine.apply_threat_event(evt)
        second = engine.apply_threat_event(evt)
        assert first["outcome"] == "applied"
        assert second["outcome"] == "suppressed-duplicate"
        history = engine.session(session.session_id).history
        assert [t.to_state for t in history].count("Quarantined") == 1

    def test_rate_limit_emits_command(self, clock):
        engine, session = self._armed_engine(clock, {"kind": "rate-limit", "rate_kbps": 512})
        engine.apply_threat_event(self._alert_for(session))
        refreshed = engine.session(session.session_id)
        assert refreshed.state == SessionState.ACTIVE
        assert refreshed.rate_limit_kbps == 512
        last = engine.commands.log[-1]
        assert last.kind.value == "SetRateLimit" and last.kbps == 512

    def test_uncorrelated_event_audited_not_acted(self, clock):
        engine, _ = self._armed_engine(clock, {"kind": "terminate-session"})
        disposition = engine.apply_threat_event(parse_snort_fast_alert(SPEC_LINE))
        assert disposition["outcome"] == "uncorrelated"
        kinds = [env.kind for env in engine.audit.records()]
        assert kinds[-1] == "threat-event"

    def test_every_applied_action_carries_trigger_seq(self, clock):
        engine, session = self._armed_engine(clock, {"kind": "quarantine-vlan"})
        engine.apply_threat_event(self._alert_for(session))
        transitions = [
            env for env in engine.audit.records() if env.kind == "session-transition"
            and env.payload["trigger"] == "threat"
        ]
        assert transitions
        ref = transitions[-1].payload["trigger_ref"]
        assert ref is not None and ref["source"] == "application" and ref["seq"] >= 1


@given(st.integers(min_value=2, max_value=8))
def test_idempotence_over_n_deliveries(n):
    from nacpdp.clock import VirtualClock

    clock = VirtualClock(1_000_000)
    engine = make_engine(clock)
    engine.threat_policy = ThreatPolicy.from_json({
        "clauses": [{"match": {"sid": 2100498}, "action": {"kind": "quarantine-vlan"}}]
    })
    _, session = engine.handle_access_request(request_for("alice", "alice-pw"))
    evt = ThreatEvent.from_json(
        dict(parse_snort_fast_alert(SPEC_LINE).to_json(), src=session.ip)
    )
    outcomes = [engine.apply_threat_event(evt)["outcome"] for _ in range(n)]
    assert outcomes[0] == "applied"
    assert set(outcomes[1:]) == {"suppressed-duplicate"}
    transitions = [t for t in engine.session(session.session_id).history
                   if t.to_state == "Quarantined"]
    assert len(transitions) == 1
