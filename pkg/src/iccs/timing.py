"""Integer-picosecond trigger schedules for fast diagnostics around T-0.

All schedule and error arithmetic is exact integer picoseconds. Jitter
models hand back integer offsets bounded by their declared accuracy, so
every |fired - scheduled| check is an integer comparison; the only float in
a report is the rms value computed from integer sums at presentation time.

Schedule text format, one entry per line: `channel_id offset_ps width_ps`.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from iccs.rpc import register_errors

PS_PER_S = 10**12

# T-0 sits mid-window: symmetric pre/post-trigger coverage of the 2-second
# shot interval, configurable per schedule.
DEFAULT_WINDOW_PS = (-(10**12), 10**12)
DEFAULT_CAPACITY = 1600
DEFAULT_ACCURACY_BOUND_PS = 30


class DuplicateChannel(Exception):
    pass


class OutOfWindow(Exception):
    pass


class CapacityExceeded(Exception):
    pass


class InvalidSchedule(Exception):
    pass


class EmptyInput(Exception):
    pass


register_errors(DuplicateChannel, OutOfWindow, CapacityExceeded,
                InvalidSchedule, EmptyInput)


@dataclass(frozen=True)
class TriggerRequest:
    channel_id: str
    offset_ps: int
    width_ps: int


@dataclass(frozen=True)
class TriggerSchedule:
    shot_id: str
    entries: tuple[TriggerRequest, ...]
    window_ps: tuple[int, int] = DEFAULT_WINDOW_PS
    capacity: int = DEFAULT_CAPACITY


@dataclass(frozen=True)
class FiredRecord:
    channel_id: str
    scheduled_ps: int
    fired_ps: int

    @property
    def error_ps(self) -> int:
        return self.fired_ps - self.scheduled_ps


@dataclass(frozen=True)
class Violation:
    kind: str  # duplicate_channel | out_of_window | capacity_exceeded | bad_width
    channel_id: str
    detail: str


class JitterModel:
    """Declared-bound jitter; draws are integer picoseconds."""

    bound_ps = 0
    name = "abstract"

    def draw(self, rng: random.Random) -> int:
        raise NotImplementedError


class ZeroJitter(JitterModel):
    name = "zero"

    def draw(self, rng):
        return 0


class BoundedUniformJitter(JitterModel):
    name = "bounded_uniform"

    def __init__(self, bound_ps: int = DEFAULT_ACCURACY_BOUND_PS):
        self.bound_ps = int(bound_ps)

    def draw(self, rng):
        return rng.randint(-self.bound_ps, self.bound_ps)


class TruncatedGaussianJitter(JitterModel):
    """Gaussian rounded to integer ps, clamped to the declared bound."""

    name = "gaussian_truncated"

    def __init__(self, sigma_ps: float = 10.0,
                 bound_ps: int = DEFAULT_ACCURACY_BOUND_PS):
        self.sigma_ps = sigma_ps
        self.bound_ps = int(bound_ps)

    def draw(self, rng):
        value = round(rng.gauss(0.0, self.sigma_ps))
        return max(-self.bound_ps, min(self.bound_ps, value))


def jitter_model(name: str, **kwargs) -> JitterModel:
    if name == "zero":
        return ZeroJitter()
    if name == "bounded_uniform":
        return BoundedUniformJitter(kwargs.get("bound_ps", DEFAULT_ACCURACY_BOUND_PS))
    if name == "gaussian_truncated":
        return TruncatedGaussianJitter(kwargs.get("sigma_ps", 10.0),
                                       kwargs.get("bound_ps", DEFAULT_ACCURACY_BOUND_PS))
    raise ValueError(f"unknown jitter model {name!r}")


def build_schedule(shot_id: str, requests: list[TriggerRequest],
                   window_ps: tuple[int, int] = DEFAULT_WINDOW_PS,
                   capacity: int = DEFAULT_CAPACITY) -> TriggerSchedule:
    """Sort, validate, and freeze a trigger schedule."""
    if len(requests) > capacity:
        raise CapacityExceeded(f"{len(requests)} entries > capacity {capacity}")
    seen: set[str] = set()
    lo, hi = window_ps
    for req in requests:
        if req.channel_id in seen:
            raise DuplicateChannel(req.channel_id)
        seen.add(req.channel_id)
        if not (lo <= req.offset_ps <= hi):
            raise OutOfWindow(
                f"{req.channel_id}: {req.offset_ps} ps outside [{lo}, {hi}]")
        if req.width_ps <= 0:
            raise InvalidSchedule(f"{req.channel_id}: width must be > 0")
    entries = tuple(sorted(requests, key=lambda r: (r.offset_ps, r.channel_id)))
    return TriggerSchedule(shot_id, entries, window_ps, capacity)


def validate(schedule: TriggerSchedule) -> list[Violation]:
    """Every violation in the schedule, not just the first."""
    violations: list[Violation] = []
    if len(schedule.entries) > schedule.capacity:
        violations.append(Violation(
            "capacity_exceeded", "",
            f"{len(schedule.entries)} entries > capacity {schedule.capacity}"))
    lo, hi = schedule.window_ps
    seen: set[str] = set()
    last_offset = None
    for entry in schedule.entries:
        if entry.channel_id in seen:
            violations.append(Violation("duplicate_channel", entry.channel_id,
                                        "channel appears more than once"))
        seen.add(entry.channel_id)
        if not (lo <= entry.offset_ps <= hi):
            violations.append(Violation(
                "out_of_window", entry.channel_id,
                f"{entry.offset_ps} ps outside [{lo}, {hi}]"))
        if entry.width_ps <= 0:
            violations.append(Violation("bad_width", entry.channel_id,
                                        f"width {entry.width_ps} ps"))
        if last_offset is not None and entry.offset_ps < last_offset:
            violations.append(Violation("unsorted", entry.channel_id,
                                        "entries not sorted by offset"))
        last_offset = entry.offset_ps
    return violations


def execute(schedule: TriggerSchedule, model: JitterModel,
            seed: int) -> list[FiredRecord]:
    """Fire every entry on the virtual timeline; deterministic per seed."""
    problems = validate(schedule)
    if problems:
        raise InvalidSchedule("; ".join(
            f"{v.kind}({v.channel_id})" for v in problems))
    rng = random.Random(seed)
    records = []
    for entry in schedule.entries:
        jitter = model.draw(rng)
        if abs(jitter) > model.bound_ps:
            raise AssertionError(
                f"jitter model {model.name} exceeded its bound")
        records.append(FiredRecord(entry.channel_id, entry.offset_ps,
                                   entry.offset_ps + jitter))
    records.sort(key=lambda r: (r.fired_ps, r.channel_id))
    return records


def accuracy_report(records: list[FiredRecord]) -> dict:
    """Max/rms trigger error over exact integers; rms floated at the end."""
    if not records:
        raise EmptyInput("no fired records")
    max_error = 0
    sum_sq = 0
    per_channel = []
    for rec in records:
        err = rec.error_ps
        max_error = max(max_error, abs(err))
        sum_sq += err * err
        per_channel.append({"channel_id": rec.channel_id,
                            "scheduled_ps": rec.scheduled_ps,
                            "fired_ps": rec.fired_ps,
                            "error_ps": err})
    count = len(records)
    return {
        "count": count,
        "max_error_ps": max_error,
        "sum_sq_error_ps2": sum_sq,
        "rms_error_ps": math.sqrt(sum_sq / count),
        "per_channel": per_channel,
    }


def render_schedule(schedule: TriggerSchedule) -> str:
    lines = [f"{e.channel_id} {e.offset_ps} {e.width_ps}"
             for e in schedule.entries]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_schedule_text(shot_id: str, text: str,
                        window_ps: tuple[int, int] = DEFAULT_WINDOW_PS,
                        capacity: int = DEFAULT_CAPACITY) -> TriggerSchedule:
    requests = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InvalidSchedule(f"line {lineno}: want 'channel offset width'")
        try:
            requests.append(TriggerRequest(parts[0], int(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise InvalidSchedule(f"line {lineno}: {exc}") from None
    return build_schedule(shot_id, requests, window_ps, capacity)
