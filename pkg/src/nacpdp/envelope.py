"""Standardized event envelope shared by every component.

Each message on the coordination channel is wrapped in an envelope carrying a
per-source monotone sequence number, a millisecond timestamp from an injected
clock, the emitting layer tag and an arbitrary JSON payload. Envelopes are
persisted one per line as JSON objects with keys seq, ts, source, kind,
payload.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Any

from .clock import Clock

# The closed set of layer tags allowed as envelope sources: the seven classic
# stack layers plus the posture-assessment layer on top ("nac-posture").
LAYER_TAGS = (
    "physical",
    "data-link",
    "network",
    "transport",
    "session",
    "presentation",
    "application",
    "nac-posture",
)


class EnvelopeError(ValueError):
    """Unknown source tag or malformed serialized envelope."""


@dataclass(frozen=True)
class EventEnvelope:
    seq: int
    ts: int
    source: str
    kind: str
    payload: Any

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "ts": self.ts,
            "source": self.source,
            "kind": self.kind,
            "payload": self.payload,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, doc: dict) -> "EventEnvelope":
        try:
            env = cls(
                seq=int(doc["seq"]),
                ts=int(doc["ts"]),
                source=doc["source"],
                kind=doc["kind"],
                payload=doc["payload"],
            )
        except KeyError as exc:
            raise EnvelopeError(f"envelope missing key: {exc}") from None
        if env.source not in LAYER_TAGS:
            raise EnvelopeError(f"unknown source tag: {env.source!r}")
        if env.seq < 1:
            raise EnvelopeError(f"seq must be >= 1, got {env.seq}")
        return env

    @classmethod
    def from_line(cls, line: str) -> "EventEnvelope":
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EnvelopeError(f"envelope line is not valid JSON: {exc}") from None
        return cls.from_json(doc)


class EnvelopeFactory:
    """Mints envelopes with per-source counters.

    Counters start at 1 (0 is reserved as the "never seen" sentinel in replay
    logic). Construction is the single serialized mutation point; a lock makes
    it safe to call from concurrent request handlers.
    """

    def __init__(self, clock: Clock):
        self._clock = clock
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()

    def next_envelope(self, source: str, kind: str, payload: Any) -> EventEnvelope:
        if source not in LAYER_TAGS:
            raise EnvelopeError(f"unknown source tag: {source!r}")
        with self._lock:
            seq = self._counters.get(source, 0) + 1
            self._counters[source] = seq
            return EventEnvelope(
                seq=seq, ts=self._clock.now_ms(), source=source, kind=kind, payload=payload
            )

    def last_seq(self, source: str) -> int:
        """Last sequence number issued for ``source``; 0 if never seen."""
        with self._lock:
            return self._counters.get(source, 0)

    def resume_from(self, source: str, seq: int) -> None:
        """Advance a counter after replaying a persisted log."""
        if source not in LAYER_TAGS:
            raise EnvelopeError(f"unknown source tag: {source!r}")
        with self._lock:
            self._counters[source] = max(self._counters.get(source, 0), int(seq))
