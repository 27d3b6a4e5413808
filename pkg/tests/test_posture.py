from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nacpdp.model import DeviceDescriptor
from nacpdp.posture import (
    CRITICAL_VULN,
    PostureError,
    PosturePolicy,
    PostureReport,
    PostureStatus,
    PostureStore,
    Requirement,
    ScanFinding,
    ScanReport,
    evaluate_posture,
)

from .conftest import COMPLIANT_CHECKS, LAPTOP_MAC, STALE_AV_CHECKS


def report(checks, mac=LAPTOP_MAC, at=0) -> PostureReport:
    return PostureReport(
        device=DeviceDescriptor(mac=mac, device_class="laptop"),
        checks=checks,
        collected_at=at,
    )


class TestEvaluate:
    def test_all_mandatory_pass(self, posture_policy):
        verdict = evaluate_posture(report(COMPLIANT_CHECKS), posture_policy)
        assert verdict.status == PostureStatus.COMPLIANT
        assert verdict.failed == ()

    def test_absent_report_is_unknown(self, posture_policy):
        verdict = evaluate_posture(None, posture_policy)
        assert verdict.status == PostureStatus.UNKNOWN

    def test_stale_av_fails_with_remediation(self, posture_policy):
        # av_signature_age_days=30 against the <=7 mandatory requirement.
        verdict = evaluate_posture(report(STALE_AV_CHECKS), posture_policy)
        assert verdict.status == PostureStatus.NON_COMPLIANT
        assert verdict.failed == ("update-av",)
        assert [item.check_id for item in verdict.remediation] == ["av_signature_age_days"]

    def test_advisory_failure_does_not_block(self, posture_policy):
        checks = dict(COMPLIANT_CHECKS, patch_level=3)
        verdict = evaluate_posture(report(checks), posture_policy)
        assert verdict.status == PostureStatus.COMPLIANT
        assert verdict.advisory_failed == ("patched",)

    def test_missing_check_fails_closed(self, posture_policy):
        verdict = evaluate_posture(report({"av_signature_age_days": 0}), posture_policy)
        assert verdict.status == PostureStatus.NON_COMPLIANT
        assert "fw-on" in verdict.failed

    def test_unknown_check_id_rejected(self):
        with pytest.raises(PostureError):
            report({"made_up_check": 1})

    def test_type_checked_values(self):
        with pytest.raises(PostureError):
            report({"av_installed": 3})
        with pytest.raises(PostureError):
            report({"av_signature_age_days": -1})

    def test_failures_in_policy_order(self, posture_policy):
        verdict = evaluate_posture(
            report({"av_signature_age_days": 99, "firewall_enabled": False}), posture_policy
        )
        assert verdict.failed == ("update-av", "fw-on")

    def test_duplicate_check_per_severity_rejected(self):
        with pytest.raises(PostureError):
            PosturePolicy(
                requirements=(
                    Requirement("a", "patch_level", ">=", 1, "mandatory"),
                    Requirement("b", "patch_level", "<=", 9, "mandatory"),
                )
            )


class TestScanReports:
    def test_critical_finding_flags_device(self, posture_policy):
        store = PostureStore()
        store.store_report(report(COMPLIANT_CHECKS))
        delta = store.ingest_scan_report(
            ScanReport(mac=LAPTOP_MAC, findings=(ScanFinding("CVE-1", 9.8),), scanned_at=10),
            posture_policy,
        )
        assert delta["flagged"] is True
        verdict = store.verdict_for(LAPTOP_MAC, posture_policy)
        assert verdict.status == PostureStatus.NON_COMPLIANT
        assert CRITICAL_VULN in verdict.failed

    def test_below_threshold_no_delta(self, posture_policy):
        store = PostureStore()
        store.store_report(report(COMPLIANT_CHECKS))
        delta = store.ingest_scan_report(
            ScanReport(mac=LAPTOP_MAC, findings=(ScanFinding("CVE-2", 5.0),), scanned_at=10),
            posture_policy,
        )
        assert delta["flagged"] is False
        assert store.verdict_for(LAPTOP_MAC, posture_policy).status == PostureStatus.COMPLIANT

    def test_newer_clean_scan_clears_flag(self, posture_policy):
        store = PostureStore()
        store.store_report(report(COMPLIANT_CHECKS))
        store.ingest_scan_report(
            ScanReport(mac=LAPTOP_MAC, findings=(ScanFinding("CVE-1", 9.8),), scanned_at=10),
            posture_policy,
        )
        store.ingest_scan_report(
            ScanReport(mac=LAPTOP_MAC, findings=(), scanned_at=20), posture_policy
        )
        assert store.verdict_for(LAPTOP_MAC, posture_policy).status == PostureStatus.COMPLIANT

    def test_older_scan_ignored(self, posture_policy):
        store = PostureStore()
        store.store_report(report(COMPLIANT_CHECKS))
        store.ingest_scan_report(
            ScanReport(mac=LAPTOP_MAC, findings=(ScanFinding("CVE-1", 9.8),), scanned_at=10),
            posture_policy,
        )
        delta = store.ingest_scan_report(
            ScanReport(mac=LAPTOP_MAC, findings=(), scanned_at=5), posture_policy
        )
        assert delta.get("stale") is True
        assert store.verdict_for(LAPTOP_MAC, posture_policy).status == PostureStatus.NON_COMPLIANT

    def test_severity_out_of_range(self):
        with pytest.raises(PostureError):
            ScanFinding("CVE-1", 10.5)

    def test_flag_without_report_stays_unknown(self, posture_policy):
        store = PostureStore()
        store.ingest_scan_report(
            ScanReport(mac=LAPTOP_MAC, findings=(ScanFinding("CVE-1", 9.8),), scanned_at=10),
            posture_policy,
        )
        assert store.verdict_for(LAPTOP_MAC, posture_policy).status == PostureStatus.UNKNOWN


class TestRemediation:
    def test_remediate_sole_failure(self, posture_policy):
        store = PostureStore()
        store.store_report(report(STALE_AV_CHECKS))
        result = store.apply_remediation(LAPTOP_MAC, "av_signature_age_days", posture_policy)
        assert result["applied"] is True
        assert store.verdict_for(LAPTOP_MAC, posture_policy).status == PostureStatus.COMPLIANT

    def test_remediate_without_report(self, posture_policy):
        store = PostureStore()
        with pytest.raises(PostureError):
            store.apply_remediation(LAPTOP_MAC, "av_signature_age_days", posture_policy)

    def test_remediate_non_failing_check_is_noop(self, posture_policy):
        store = PostureStore()
        store.store_report(report(COMPLIANT_CHECKS))
        result = store.apply_remediation(LAPTOP_MAC, "av_signature_age_days", posture_policy)
        assert result["applied"] is False
        assert result["reason"] == "not-failing"

    def test_remediate_one_of_two_failures(self, posture_policy):
        store = PostureStore()
        store.store_report(report({"av_signature_age_days": 30, "firewall_enabled": False}))
        store.apply_remediation(LAPTOP_MAC, "av_signature_age_days", posture_policy)
        verdict = store.verdict_for(LAPTOP_MAC, posture_policy)
        assert verdict.status == PostureStatus.NON_COMPLIANT
        assert verdict.failed == ("fw-on",)


check_values = st.fixed_dictionaries(
    {},
    optional={
        "av_installed": st.booleans(),
        "av_signature_age_days": st.integers(min_value=0, max_value=60),
        "patch_level": st.integers(min_value=0, max_value=30),
        "firewall_enabled": st.booleans(),
        "forbidden_process_present": st.booleans(),
    },
)


@given(checks=check_values)
def test_unknown_iff_absent(checks):
    policy = PosturePolicy(
        requirements=(Requirement("r1", "av_installed", "=", True, "mandatory"),)
    )
    assert evaluate_posture(None, policy).status == PostureStatus.UNKNOWN
    assert evaluate_posture(report(checks), policy).status != PostureStatus.UNKNOWN


@given(checks=check_values, extra_threshold=st.integers(min_value=0, max_value=60))
def test_adding_mandatory_requirement_is_monotone(checks, extra_threshold):
    base = PosturePolicy(
        requirements=(Requirement("r1", "av_installed", "=", True, "mandatory"),)
    )
    extended = PosturePolicy(
        requirements=base.requirements
        + (Requirement("r2", "patch_level", ">=", extra_threshold, "mandatory"),)
    )
    before = evaluate_posture(report(checks), base)
    after = evaluate_posture(report(checks), extended)
    if before.status == PostureStatus.NON_COMPLIANT:
        assert after.status == PostureStatus.NON_COMPLIANT


@given(checks=check_values)
def test_evaluation_is_order_insensitive(checks):
    policy = PosturePolicy(
        requirements=(
            Requirement("r1", "av_installed", "=", True, "mandatory"),
            Requirement("r2", "patch_level", ">=", 5, "mandatory"),
        )
    )
    forward = evaluate_posture(report(dict(checks)), policy)
    reversed_checks = dict(reversed(list(checks.items())))
    backward = evaluate_posture(report(reversed_checks), policy)
    assert forward == backward
