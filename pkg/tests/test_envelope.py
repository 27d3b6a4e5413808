from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nacpdp.clock import VirtualClock
from nacpdp.envelope import LAYER_TAGS, EnvelopeError, EnvelopeFactory, EventEnvelope


@pytest.fixture
def factory():
    return EnvelopeFactory(VirtualClock(500))


def test_first_envelope_starts_at_one(factory):
    env = factory.next_envelope("nac-posture", "test", {"a": 1})
    assert env.seq == 1
    assert env.ts == 500
    assert env.source == "nac-posture"


def test_successive_calls_increment(factory):
    first = factory.next_envelope("nac-posture", "t", None)
    second = factory.next_envelope("nac-posture", "t", None)
    assert (first.seq, second.seq) == (1, 2)


def test_unknown_source_rejected(factory):
    with pytest.raises(EnvelopeError):
        factory.next_envelope("layer-9", "t", None)


def test_counters_are_per_source(factory):
    factory.next_envelope("application", "t", None)
    factory.next_envelope("application", "t", None)
    env = factory.next_envelope("network", "t", None)
    assert env.seq == 1


def test_timestamp_comes_from_injected_clock():
    clock = VirtualClock(10)
    factory = EnvelopeFactory(clock)
    assert factory.next_envelope("session", "t", None).ts == 10
    clock.advance(32)
    assert factory.next_envelope("session", "t", None).ts == 42


def test_eight_layer_tags():
    assert len(LAYER_TAGS) == 8
    assert LAYER_TAGS[-1] == "nac-posture"


def test_serialization_round_trip(factory):
    env = factory.next_envelope("nac-posture", "decision", {"nested": [1, "two", None]})
    assert EventEnvelope.from_line(env.to_line()) == env


def test_from_line_rejects_bad_source():
    line = '{"seq": 1, "ts": 0, "source": "layer-9", "kind": "x", "payload": null}'
    with pytest.raises(EnvelopeError):
        EventEnvelope.from_line(line)


def test_from_line_rejects_garbage():
    with pytest.raises(EnvelopeError):
        EventEnvelope.from_line("not json")


def test_resume_from_continues_counter(factory):
    factory.resume_from("nac-posture", 41)
    assert factory.next_envelope("nac-posture", "t", None).seq == 42


@given(st.lists(st.sampled_from(LAYER_TAGS), max_size=200))
def test_no_gaps_no_duplicates_for_any_interleaving(sources):
    factory = EnvelopeFactory(VirtualClock(0))
    envelopes = [factory.next_envelope(src, "t", None) for src in sources]
    per_source: dict[str, list[int]] = {}
    for env in envelopes:
        per_source.setdefault(env.source, []).append(env.seq)
    for seqs in per_source.values():
        assert sorted(seqs) == list(range(1, len(seqs) + 1))


@given(
    st.recursive(
        st.none() | st.booleans() | st.integers() | st.text(max_size=20),
        lambda children: st.lists(children, max_size=4)
        | st.dictionaries(st.text(max_size=8), children, max_size=4),
        max_leaves=20,
    )
)
def test_round_trip_for_arbitrary_payload(payload):
    factory = EnvelopeFactory(VirtualClock(7))
    env = factory.next_envelope("application", "blob", payload)
    assert EventEnvelope.from_line(env.to_line()) == env
