"""Facility time source: a virtual, test-steppable clock or a wall-slaved one.

All components read time through a clock object so that scripted runs can be
replayed deterministically (virtual mode) or measured for real latency
(wall mode). Durations are integer nanoseconds internally; float seconds at
API boundaries are converted once, with rounding, so that repeated small
advances compose exactly.
"""

from __future__ import annotations

import threading
import time
from datetime import datetime, timedelta, timezone

NS_PER_S = 1_000_000_000

# Virtual runs date their records from a fixed epoch so that replays of the
# same scenario produce byte-identical logs.
VIRTUAL_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


def s_to_ns(seconds: float) -> int:
    return round(seconds * NS_PER_S)


def ns_to_s(ns: int) -> float:
    return ns / NS_PER_S


class Clock:
    """Base clock interface. Subclasses define where `now_ns` comes from."""

    mode = "abstract"

    def now_ns(self) -> int:
        raise NotImplementedError

    def now_s(self) -> float:
        return ns_to_s(self.now_ns())

    def iso(self, ns: int | None = None) -> str:
        """ISO-8601 UTC timestamp for a clock reading (default: now)."""
        raise NotImplementedError


class VirtualClock(Clock):
    """Manually stepped clock. Time moves only through `advance`."""

    mode = "virtual"

    def __init__(self, start_ns: int = 0) -> None:
        self._now_ns = start_ns
        self._lock = threading.Lock()

    def now_ns(self) -> int:
        with self._lock:
            return self._now_ns

    def advance(self, dt_s: float) -> int:
        """Advance by a positive duration; returns the new reading."""
        return self.advance_ns(s_to_ns(dt_s))

    def advance_ns(self, dt_ns: int) -> int:
        if dt_ns <= 0:
            raise ValueError(f"advance requires dt > 0, got {dt_ns} ns")
        with self._lock:
            self._now_ns += dt_ns
            return self._now_ns

    def iso(self, ns: int | None = None) -> str:
        ns = self.now_ns() if ns is None else ns
        stamp = VIRTUAL_EPOCH + timedelta(microseconds=ns / 1000)
        return stamp.strftime("%Y-%m-%dT%H:%M:%S.%fZ")


class WallClock(Clock):
    """Clock slaved to the host monotonic clock, zeroed at construction."""

    mode = "wall"

    def __init__(self) -> None:
        self._t0 = time.monotonic_ns()
        self._base = datetime.now(timezone.utc)

    def now_ns(self) -> int:
        return time.monotonic_ns() - self._t0

    def iso(self, ns: int | None = None) -> str:
        ns = self.now_ns() if ns is None else ns
        stamp = self._base + timedelta(microseconds=ns / 1000)
        return stamp.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
