"""Append-only audit persistence.

The audit stream is the single source of truth: the session table is a
derived, rebuildable view. Records are event envelopes, one JSON object per
line; the file is written by exactly one writer.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Iterable, Optional, Union

from .envelope import EventEnvelope


class AuditLog:
    """In-memory record list with optional line-per-envelope file persistence."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self._path = Path(path) if path is not None else None
        self._records: list[EventEnvelope] = []
        self._lock = threading.Lock()
        self._fh = None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self._path, "a", encoding="utf-8")

    @property
    def path(self) -> Optional[Path]:
        return self._path

    def append(self, envelope: EventEnvelope) -> None:
        with self._lock:
            self._records.append(envelope)
            if self._fh is not None:
                self._fh.write(envelope.to_line() + "\n")
                self._fh.flush()

    def records(self, since_seq: int = 0) -> list[EventEnvelope]:
        """Records with seq greater than ``since_seq`` (audit envelopes form a
        single consecutive sequence, so this is a plain cursor)."""
        with self._lock:
            return [env for env in self._records if env.seq > since_seq]

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def read_audit_file(path: Union[str, Path]) -> list[EventEnvelope]:
    envelopes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            envelopes.append(EventEnvelope.from_line(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return envelopes


def verify_gap_free(envelopes: Iterable[EventEnvelope]) -> None:
    """Check the per-source seq contract: starts at 1, no gaps, no duplicates."""
    last: dict[str, int] = {}
    for env in envelopes:
        expected = last.get(env.source, 0) + 1
        if env.seq != expected:
            raise ValueError(
                f"source {env.source}: expected seq {expected}, found {env.seq}"
            )
        last[env.source] = env.seq
