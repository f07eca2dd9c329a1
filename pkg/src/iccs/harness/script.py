"""Line-oriented scenario scripts: align, countdown, holds, faults, checks.

Verbs:
    policy continue|stop          on step failure, keep going or halt
    misalign <beam> <dx> <dy>     offset a beam's spot (pixels)
    align <beam> [gain_error]     run closed-loop alignment
    plan <path|@name>             load and validate a shot plan
    hold_at <t_s> <duration_s>    scripted hold during the next countdown
    abort_at <t_s>                scripted abort during the next countdown
    countdown                     run the loaded plan to completion/abort
    collect <sup_name>            archive a diagnostics bundle for the last shot
    fault <point_id> [reason...]  inject a device fault
    clear_fault <point_id>
    set_input <input_id> <0|1>    drive a PLC field input
    reset_trips
    reserve <resource> <holder>
    release <resource> <holder>
    alert <severity> <text...>    raise a test alert
    sleep <seconds>               advance (virtual) or wait (wall)
    expect phase <phase>
    expect outcome <completed|aborted>
    expect recovery_complete
    expect rollup_ready <true|false>
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from iccs.director import parse_plan
from iccs.harness.config import resolve_data_path
from iccs.harness.facility import Facility


class ScriptParseError(Exception):
    pass


class StepFailed(Exception):
    pass


KNOWN_VERBS = {"policy", "misalign", "align", "plan", "hold_at", "abort_at",
               "countdown", "collect", "fault", "clear_fault", "set_input",
               "reset_trips", "reserve", "release", "alert", "sleep", "expect"}


@dataclass
class StepResult:
    lineno: int
    verb: str
    ok: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    steps: list[StepResult] = field(default_factory=list)
    completed: bool = True

    @property
    def all_ok(self) -> bool:
        return all(s.ok for s in self.steps)

    def render(self) -> str:
        lines = [f"step {s.lineno:3d} {s.verb:<12} "
                 f"{'ok' if s.ok else 'FAILED'} {s.detail}".rstrip()
                 for s in self.steps]
        return "\n".join(lines) + "\n"


def parse_script(text: str) -> list[tuple[int, list[str]]]:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] not in KNOWN_VERBS:
            raise ScriptParseError(f"line {lineno}: unknown verb {parts[0]!r}")
        steps.append((lineno, parts))
    return steps


class ScriptRunner:
    """Executes one scenario against a running facility."""

    def __init__(self, facility: Facility):
        self.facility = facility
        self.stop_on_error = False
        self._scheduled_holds: list[tuple[float, float]] = []
        self._scheduled_aborts: list[float] = []

    def run_path(self, path: str | Path) -> ScenarioReport:
        path = resolve_data_path(str(path), kinds=(".script", ""))
        return self.run_text(path.read_text(encoding="utf-8"))

    def run_text(self, text: str) -> ScenarioReport:
        steps = parse_script(text)
        if self.facility.restart_elapsed_s is not None:
            self.facility.metrics.scalar("restart_s",
                                         self.facility.restart_elapsed_s)
        report = ScenarioReport()
        for lineno, parts in steps:
            try:
                detail = self._execute(parts) or ""
                report.steps.append(StepResult(lineno, parts[0], True, detail))
            except Exception as exc:
                report.steps.append(StepResult(
                    lineno, parts[0], False, f"{type(exc).__name__}: {exc}"))
                if self.stop_on_error:
                    report.completed = False
                    break
        return report

    # -- verbs ---------------------------------------------------------------

    def _execute(self, parts: list[str]) -> str | None:
        verb, args = parts[0], parts[1:]
        handler = getattr(self, f"_verb_{verb}")
        return handler(args)

    def _verb_policy(self, args):
        self.stop_on_error = args[0] == "stop"

    def _verb_misalign(self, args):
        beam, dx, dy = args[0], float(args[1]), float(args[2])
        camera_id = self._beam_camera(beam)
        owner = self.facility.config.point_owner()[camera_id]
        camera = self.facility.feps[owner].device(camera_id)
        camera.base_cx += dx
        camera.base_cy += dy
        return f"{camera_id} spot offset by ({dx}, {dy}) px"

    def _beam_camera(self, beam: str) -> str:
        sup = self.facility.supervisors.get("alignment")
        if sup is None or beam not in sup.channels:
            raise StepFailed(f"no alignment channel for beam {beam}")
        return sup.channels[beam].camera

    def _verb_align(self, args):
        beam = args[0]
        gain_error = float(args[1]) if len(args) > 1 else 0.0
        sup = self.facility.supervisors["alignment"]
        trace = sup.run_alignment(beam, gain_error=gain_error)
        if not trace.converged:
            raise StepFailed(f"{beam} did not converge "
                             f"({len(trace.iterations)} iterations)")
        return (f"{beam} converged in {len(trace.iterations) - 1} corrections, "
                f"final error {trace.final_error:.4f} px")

    def _verb_plan(self, args):
        path = resolve_data_path(args[0], kinds=(".plan", ""))
        plan = parse_plan(path.read_text(encoding="utf-8"))
        self.facility.director.load_plan(plan)
        return f"plan {plan.shot_id} loaded"

    def _verb_hold_at(self, args):
        self._scheduled_holds.append((float(args[0]), float(args[1])))

    def _verb_abort_at(self, args):
        self._scheduled_aborts.append(float(args[0]))

    def _verb_countdown(self, args):
        director = self.facility.director
        hooks = _ScheduledOps(director, self.facility.config.tick_period_s,
                              list(self._scheduled_holds),
                              list(self._scheduled_aborts))
        self._scheduled_holds.clear()
        self._scheduled_aborts.clear()
        director.add_tick_hook(hooks)
        try:
            result = director.run_countdown()
        finally:
            director.remove_tick_hook(hooks)
        detail = f"outcome {result.outcome}"
        if result.recovery is not None:
            detail += (f", recovered {result.recovery['recovered']}"
                       f"/{result.recovery['expected']}"
                       f" in {result.recovery['elapsed_s']:.2f}s")
            self.facility.metrics.scalar("recovery_s",
                                         result.recovery["elapsed_s"])
        return detail

    def _verb_collect(self, args):
        sup = self.facility.supervisors[args[0]]
        result = self.facility.director.last_result
        if result is None:
            raise StepFailed("no shot to collect for")
        bundle = sup.collect(result.shot_id)
        return f"{args[0]} bundled {len(bundle['records'])} records"

    def _verb_fault(self, args):
        reason = " ".join(args[1:]) or "scripted fault"
        self.facility.inject_fault(args[0], reason)
        return f"{args[0]} fault injected"

    def _verb_clear_fault(self, args):
        self.facility.clear_fault(args[0])

    def _verb_set_input(self, args):
        self.facility.plc.set_field_input(args[0], args[1] == "1")

    def _verb_reset_trips(self, args):
        cleared = self.facility.plc.reset_trips("script")
        return f"cleared {cleared}"

    def _verb_reserve(self, args):
        self.facility.services.reservations.reserve(args[0], args[1])

    def _verb_release(self, args):
        self.facility.services.reservations.release(args[0], args[1])

    def _verb_alert(self, args):
        severity, text = args[0], " ".join(args[1:])
        self.facility.services.alerts.raise_alert("script", severity, text)

    def _verb_sleep(self, args):
        seconds = float(args[0])
        if self.facility.mode == "virtual":
            self.facility.advance(seconds)
        else:
            time.sleep(seconds)

    def _verb_expect(self, args):
        kind = args[0]
        director = self.facility.director
        if kind == "phase":
            actual = director.phase
            if actual != args[1]:
                raise StepFailed(f"phase {actual}, expected {args[1]}")
            return f"phase {actual}"
        if kind == "outcome":
            result = director.last_result
            if result is None or result.outcome != args[1]:
                raise StepFailed(f"outcome {result and result.outcome}, "
                                 f"expected {args[1]}")
            return f"outcome {result.outcome}"
        if kind == "recovery_complete":
            result = director.last_result
            if result is None or result.recovery is None:
                raise StepFailed("no recovery report")
            if not result.recovery["complete"]:
                raise StepFailed(f"missing: {result.recovery['missing']}")
            return "recovery complete"
        if kind == "rollup_ready":
            rollup = director.status_rollup()
            want = args[1] == "true"
            if rollup["ready"] != want:
                raise StepFailed(f"ready={rollup['ready']}, expected {want}")
            return f"ready={rollup['ready']}"
        raise StepFailed(f"unknown expectation {kind!r}")


class _ScheduledOps:
    """Tick hook implementing hold_at/abort_at for one countdown run."""

    def __init__(self, director, tick_period_s: float,
                 holds: list[tuple[float, float]], aborts: list[float]):
        self.director = director
        self.tick_period_s = tick_period_s
        self.holds = sorted(holds, reverse=True)
        self.aborts = sorted(aborts, reverse=True)
        self._resume_after_ticks: int | None = None

    def __call__(self, t_minus_ms: int, phase: str) -> None:
        if phase in ("counting", "held") and self.aborts \
                and t_minus_ms <= self.aborts[0] * 1000:
            self.aborts.pop(0)
            self.director.abort("scripted abort")
            return
        if phase == "held" and self._resume_after_ticks is not None:
            self._resume_after_ticks -= 1
            if self._resume_after_ticks <= 0:
                self._resume_after_ticks = None
                self.director.resume()
            return
        if phase != "counting":
            return
        if self.holds and t_minus_ms <= self.holds[0][0] * 1000:
            at, duration = self.holds.pop(0)
            self._resume_after_ticks = max(1, round(duration / self.tick_period_s))
            self.director.hold(f"scripted hold at T-{at}")
