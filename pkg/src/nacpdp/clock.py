"""Clock abstraction.

All timestamps in the system are integer milliseconds taken from an injected
clock, never from ambient time, so that scenario runs and replays are
deterministic.
"""

from __future__ import annotations

import time


class Clock:
    """Timestamp source. Subclasses supply ``now_ms``."""

    def now_ms(self) -> int:
        raise NotImplementedError


class VirtualClock(Clock):
    """Manually-advanced clock used by the simulator and by tests."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now += int(delta_ms)
        return self._now

    def set(self, at_ms: int) -> int:
        if at_ms < self._now:
            raise ValueError("clock cannot move backwards")
        self._now = int(at_ms)
        return self._now


class SystemClock(Clock):
    """Wall clock, for live service deployments."""

    def now_ms(self) -> int:
        return int(time.time() * 1000)
