"""Append-only event log with dense sequence numbers and a hash chain.

Records are one line each in `events.log`:

    <seq>\t<ISO-8601 time>\t<source>\t<category>\t<payload JSON>

Payload JSON is canonical (sorted keys, compact separators) so that a
replayed deterministic run produces a byte-identical file. Recovery after
a crash truncates to the last complete, parseable line.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from iccs.bus.core import topic_matches
from iccs.clock import Clock
from iccs.rpc import register_errors

CATEGORIES = ("operator_action", "device_status", "shot_phase", "error")


class InvalidRange(Exception):
    pass


class StorageFailure(Exception):
    pass


register_errors(InvalidRange, StorageFailure)


@dataclass(frozen=True)
class EventRecord:
    seq: int
    time_ns: int
    time_iso: str
    source: str
    category: str
    payload: str  # canonical JSON text

    def line(self) -> str:
        return f"{self.seq}\t{self.time_iso}\t{self.source}\t{self.category}\t{self.payload}\n"


def _canonical(payload: dict | str) -> str:
    if isinstance(payload, str):
        payload = {"text": payload}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


class EventLog:
    """Global, append-only operational history."""

    def __init__(self, clock: Clock, path: Path | None = None,
                 on_storage_failure: Callable[[str], None] | None = None):
        self.clock = clock
        self.path = Path(path) if path is not None else None
        self.on_storage_failure = on_storage_failure
        # reentrant: the storage-failure hook raises an alert, which logs
        self._lock = threading.RLock()
        self._records: list[EventRecord] = []
        self._next_seq = 1
        self._chain = hashlib.sha256(b"genesis").hexdigest()
        self._file = None
        self._failing = False
        if self.path is not None:
            self._recover()
            self._file = self.path.open("a", encoding="utf-8")

    def _recover(self) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            return
        good: list[EventRecord] = []
        raw = self.path.read_text(encoding="utf-8")
        for line in raw.splitlines(keepends=True):
            if not line.endswith("\n"):
                break  # incomplete trailing record: truncate here
            rec = self._parse(line)
            if rec is None:
                break
            good.append(rec)
        self._records = good
        self._next_seq = good[-1].seq + 1 if good else 1
        for rec in good:
            self._chain = self._extend_chain(self._chain, rec)
        with self.path.open("w", encoding="utf-8") as f:
            f.writelines(r.line() for r in good)

    @staticmethod
    def _parse(line: str) -> EventRecord | None:
        parts = line.rstrip("\n").split("\t", 4)
        if len(parts) != 5:
            return None
        try:
            seq = int(parts[0])
            json.loads(parts[4])
        except ValueError:
            return None
        return EventRecord(seq, 0, parts[1], parts[2], parts[3], parts[4])

    @staticmethod
    def _extend_chain(chain: str, rec: EventRecord) -> str:
        h = hashlib.sha256()
        h.update(chain.encode())
        h.update(f"{rec.seq}:{rec.payload}".encode())
        return h.hexdigest()

    def log(self, source: str, category: str, payload: dict | str) -> int:
        """Append one record; returns its sequence number."""
        if category not in CATEGORIES:
            raise ValueError(f"unknown event category {category!r}")
        text = _canonical(payload)
        with self._lock:
            now = self.clock.now_ns()
            rec = EventRecord(self._next_seq, now, self.clock.iso(now),
                              source or "(unknown)", category, text)
            self._next_seq += 1
            self._records.append(rec)
            self._chain = self._extend_chain(self._chain, rec)
            if self._file is not None:
                try:
                    self._file.write(rec.line())
                    self._file.flush()
                except (OSError, ValueError) as exc:
                    # ValueError covers writes on a closed handle
                    self._storage_failed(str(exc))
            return rec.seq

    def _storage_failed(self, detail: str) -> None:
        # Guard against recursion: the failure hook raises a critical alert,
        # which logs an event, which may fail again.
        if not self._failing and self.on_storage_failure is not None:
            self._failing = True
            try:
                self.on_storage_failure(detail)
            finally:
                self._failing = False
        raise StorageFailure(detail)

    def query(self, start_ns: int | None = None, end_ns: int | None = None,
              source_pattern: str | None = None,
              category: str | None = None) -> list[EventRecord]:
        """Matching records in ascending seq order; bounds are inclusive."""
        if start_ns is not None and end_ns is not None and start_ns > end_ns:
            raise InvalidRange(f"start {start_ns} > end {end_ns}")
        with self._lock:
            records = list(self._records)
        out = []
        for rec in records:
            if start_ns is not None and rec.time_ns < start_ns:
                continue
            if end_ns is not None and rec.time_ns > end_ns:
                continue
            if category is not None and rec.category != category:
                continue
            if source_pattern is not None and not _source_matches(source_pattern, rec.source):
                continue
            out.append(rec)
        return out

    def records(self) -> list[EventRecord]:
        with self._lock:
            return list(self._records)

    def chain_hash(self) -> str:
        with self._lock:
            return self._chain

    def last_seq(self) -> int:
        with self._lock:
            return self._next_seq - 1

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None


def _source_matches(pattern: str, source: str) -> bool:
    if "*" not in pattern:
        return pattern == source
    return topic_matches(pattern, source)
