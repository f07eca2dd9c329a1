"""Shot director: validates shot plans, distributes the countdown clock,
sequences participants through marks, fires T-0 once, and drives post-shot
data recovery.

Countdown loop, per tick: scripted hooks run first, then pending
hold/resume/abort requests apply, then any due mark is dispatched to every
participant and acknowledged (the barrier) before the tick for that time
publishes on "clock/tick". Holds freeze t_minus while simulated time keeps
flowing; abort safes every participant and publishes no further ticks.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass, field

from iccs import timing
from iccs.bus.core import Bus, DeadlineExceeded
from iccs.clock import Clock
from iccs.rpc import call_json, json_handler, register_errors

PHASES = ("idle", "setup", "ready", "counting", "held", "fired",
          "post_shot", "aborted")

_PHASE_TRANSITIONS = {
    ("idle", "setup"), ("setup", "ready"), ("ready", "counting"),
    ("counting", "held"), ("held", "counting"),
    ("counting", "fired"), ("fired", "post_shot"),
    ("setup", "aborted"), ("ready", "aborted"),
    ("counting", "aborted"), ("held", "aborted"),
    ("post_shot", "idle"), ("aborted", "idle"),
}

MARK_ACTIONS = ("setup", "arm", "charge", "final_check", "fire")


class UnknownParticipant(Exception):
    pass


class InvalidMarks(Exception):
    pass


class ScheduleInvalid(Exception):
    pass


class ParticipantNotReady(Exception):
    pass


class ParticipantTimeout(Exception):
    pass


class PermissiveDenied(Exception):
    pass


class IllegalPhase(Exception):
    pass


register_errors(UnknownParticipant, InvalidMarks, ScheduleInvalid,
                ParticipantNotReady, ParticipantTimeout, PermissiveDenied,
                IllegalPhase)


@dataclass(frozen=True)
class CountdownMark:
    t_minus_ms: int
    action: str


@dataclass
class ShotPlan:
    shot_id: str
    participants: list[str]
    marks: list[CountdownMark]
    goals: dict[str, float] = field(default_factory=dict)
    trigger_requests: list[timing.TriggerRequest] = field(default_factory=list)
    target_v: float = 18_000.0
    fire_permissives: list[str] = field(default_factory=list)
    jitter: str = "bounded_uniform"
    jitter_bound_ps: int = timing.DEFAULT_ACCURACY_BOUND_PS


def parse_plan(text: str) -> ShotPlan:
    """Parse the line-oriented plan format; raises InvalidMarks on trouble."""
    shot_id = "shot-0001"
    participants: list[str] = []
    marks: list[CountdownMark] = []
    goals: dict[str, float] = {}
    triggers: list[timing.TriggerRequest] = []
    target_v = 18_000.0
    permissives: list[str] = []
    jitter, bound = "bounded_uniform", timing.DEFAULT_ACCURACY_BOUND_PS
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "shot":
                shot_id = parts[1]
            elif key == "participant":
                participants.append(parts[1])
            elif key == "mark":
                marks.append(CountdownMark(round(float(parts[1]) * 1000), parts[2]))
            elif key == "goal":
                goals[parts[1]] = float(parts[2])
            elif key == "trigger":
                triggers.append(timing.TriggerRequest(
                    parts[1], int(parts[2]), int(parts[3])))
            elif key == "target_kv":
                target_v = float(parts[1]) * 1000.0
            elif key == "permissive":
                permissives.append(parts[1])
            elif key == "jitter":
                jitter = parts[1]
                if len(parts) > 2:
                    bound = int(parts[2])
            else:
                raise ValueError(f"unknown plan key {key!r}")
        except (IndexError, ValueError) as exc:
            raise InvalidMarks(f"plan line {lineno}: {exc}") from None
    return ShotPlan(shot_id, participants, marks, goals, triggers,
                    target_v, permissives, jitter, bound)


@dataclass
class ShotResult:
    shot_id: str
    outcome: str  # completed | aborted
    fired_at_ns: int | None = None
    abort_reason: str = ""
    recovery: dict | None = None


class ShotDirector:
    """Top-level supervisor conducting the shot plan."""

    def __init__(self, bus: Bus, clock: Clock, *, events=None, alerts=None,
                 archive=None, plc_evaluate=None, advance_fn=None,
                 fep_ids: list[str] | None = None,
                 tick_period_s: float = 0.1, ack_deadline_s: float = 2.0,
                 seed: int = 0, parallel_marks: bool = False,
                 timing_window_ps=timing.DEFAULT_WINDOW_PS,
                 timing_capacity: int = timing.DEFAULT_CAPACITY):
        self.bus = bus
        self.clock = clock
        self.events = events
        self.alerts = alerts
        self.archive = archive
        self.plc_evaluate = plc_evaluate  # callable(action_id) -> (allow, failing)
        self.advance_fn = advance_fn or (lambda dt: time.sleep(dt))
        self.fep_ids = fep_ids or []
        self.tick_period_ms = round(tick_period_s * 1000)
        self.ack_deadline_s = ack_deadline_s
        self.seed = seed
        self.parallel_marks = parallel_marks
        self.timing_window_ps = timing_window_ps
        self.timing_capacity = timing_capacity

        self._lock = threading.RLock()
        self.phase = "idle"
        self.t_minus_ms = 0
        self.hold_reason = ""
        self._plan: ShotPlan | None = None
        self._schedule: timing.TriggerSchedule | None = None
        self._hold_requested = False
        self._resume_requested = False
        self._abort_requested = ""
        self._fired_shots: set[str] = set()
        self._armed_manifest: dict[str, list[str]] = {}
        self._tick_hooks: list = []
        self._readiness: dict[str, dict] = {}
        self._host = None
        self._readiness_sub = None
        self.last_result: ShotResult | None = None

    # -- lifecycle --------------------------------------------------------

    def start(self) -> None:
        self._host = self.bus.host("director-node")
        self._host.serve("sup/shot_director", json_handler(self._op))
        self._readiness_sub = self.bus.subscribe(
            "readiness/*", callback=self._on_readiness)

    def stop(self) -> None:
        if self._readiness_sub is not None:
            self.bus.unsubscribe(self._readiness_sub)
            self._readiness_sub = None
        if self._host is not None:
            self._host.stop()
            self._host = None

    def add_tick_hook(self, hook) -> None:
        """hook(t_minus_ms, phase) runs at the top of every countdown tick."""
        self._tick_hooks.append(hook)

    def remove_tick_hook(self, hook) -> None:
        try:
            self._tick_hooks.remove(hook)
        except ValueError:
            pass

    # -- plan ----------------------------------------------------------------

    def load_plan(self, plan: ShotPlan) -> ShotPlan:
        """Validate a plan end to end and enter the setup phase."""
        with self._lock:
            if self.phase != "idle":
                raise IllegalPhase(f"cannot load a plan while {self.phase}")
        self._validate_marks(plan.marks)
        for name in plan.participants:
            try:
                self.bus.resolve_name(name)
            except Exception:
                raise UnknownParticipant(name) from None
        try:
            schedule = timing.build_schedule(
                plan.shot_id, plan.trigger_requests,
                self.timing_window_ps, self.timing_capacity)
        except Exception as exc:
            raise ScheduleInvalid(f"{type(exc).__name__}: {exc}") from None
        if plan.goals and "sup/lpom" in plan.participants:
            call_json(self.bus, "sup/lpom",
                      {"op": "setup_goals", "goals": plan.goals},
                      self.ack_deadline_s, source="sup/shot_director")
        with self._lock:
            self._plan = plan
            self._schedule = schedule
            self._armed_manifest[plan.shot_id] = []
            self._set_phase("setup", shot_id=plan.shot_id)
        return plan

    @staticmethod
    def _validate_marks(marks: list[CountdownMark]) -> None:
        if not marks:
            raise InvalidMarks("plan has no countdown marks")
        times = [m.t_minus_ms for m in marks]
        if any(a <= b for a, b in zip(times, times[1:])):
            raise InvalidMarks(f"marks not strictly decreasing: {times}")
        if marks[-1].t_minus_ms != 0 or marks[-1].action != "fire":
            raise InvalidMarks("marks must end with fire at t_minus 0")
        for mark in marks:
            if mark.action not in MARK_ACTIONS:
                raise InvalidMarks(f"unknown mark action {mark.action!r}")

    # -- countdown -------------------------------------------------------------

    def run_countdown(self) -> ShotResult:
        plan = self._require_plan()
        self._check_participants_ready(plan)
        self._check_fire_permissives(plan)
        with self._lock:
            self._set_phase("ready", shot_id=plan.shot_id)
            self._set_phase("counting", shot_id=plan.shot_id)
            self.t_minus_ms = plan.marks[0].t_minus_ms
        result = self._countdown_loop(plan)
        self.last_result = result
        return result

    def _countdown_loop(self, plan: ShotPlan) -> ShotResult:
        pending = list(plan.marks)
        while True:
            for hook in self._tick_hooks:
                hook(self.t_minus_ms, self.phase)
            with self._lock:
                abort_reason = self._abort_requested
            if abort_reason:
                self._do_abort(abort_reason, plan)
                return ShotResult(plan.shot_id, "aborted",
                                  abort_reason=abort_reason)
            with self._lock:
                if self.phase == "counting" and self._hold_requested:
                    self._hold_requested = False
                    self._set_phase("held", shot_id=plan.shot_id,
                                    reason=self.hold_reason)
            if self.phase == "held":
                resumed = False
                with self._lock:
                    if self._resume_requested:
                        self._resume_requested = False
                        self.hold_reason = ""
                        self._set_phase("counting", shot_id=plan.shot_id)
                        resumed = True
                if not resumed:
                    self._publish_tick(plan)
                    self.advance_fn(self.tick_period_ms / 1000.0)
                continue
            # dispatch every mark whose time has been reached
            while pending and pending[0].t_minus_ms >= self.t_minus_ms:
                mark = pending.pop(0)
                try:
                    self._dispatch_mark(plan, mark)
                except Exception as exc:
                    reason = f"{mark.action} failed: {exc}"
                    self._do_abort(reason, plan)
                    return ShotResult(plan.shot_id, "aborted",
                                      abort_reason=reason)
                if mark.action == "fire":
                    fired_at = self.clock.now_ns()
                    self._publish_tick(plan)  # the T-0 tick, after the barrier
                    with self._lock:
                        self._set_phase("fired", shot_id=plan.shot_id)
                        self._set_phase("post_shot", shot_id=plan.shot_id)
                    recovery = self.recover_post_shot(plan.shot_id)
                    return ShotResult(plan.shot_id, "completed",
                                      fired_at_ns=fired_at, recovery=recovery)
            self._publish_tick(plan)
            self.advance_fn(self.tick_period_ms / 1000.0)
            with self._lock:
                self.t_minus_ms -= self.tick_period_ms

    def _dispatch_mark(self, plan: ShotPlan, mark: CountdownMark) -> None:
        self._log("shot_phase", {"op": "mark_dispatch", "action": mark.action,
                                 "t_minus_ms": mark.t_minus_ms,
                                 "shot_id": plan.shot_id})
        if mark.action == "fire":
            self._execute_fire(plan)
        params = {}
        if mark.action == "charge":
            params["target_v"] = plan.target_v
        acks: dict[str, dict] = {}

        def send(name: str) -> None:
            try:
                acks[name] = call_json(
                    self.bus, name,
                    {"op": "action", "action": mark.action,
                     "shot_id": plan.shot_id, "params": params},
                    self.ack_deadline_s, source="sup/shot_director")
            except DeadlineExceeded:
                raise ParticipantTimeout(f"{name} missed {mark.action} ack") from None

        if self.parallel_marks:
            errors: list[BaseException] = []

            def worker(name):
                try:
                    send(name)
                except BaseException as exc:
                    errors.append(exc)

            threads = [threading.Thread(target=worker, args=(n,))
                       for n in plan.participants]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if errors:
                raise errors[0]
        else:
            for name in plan.participants:
                send(name)
        for name in plan.participants:
            self._log("shot_phase", {"op": "mark_ack", "action": mark.action,
                                     "participant": name,
                                     "shot_id": plan.shot_id})
            if mark.action == "arm":
                armed = acks.get(name, {}).get("armed") or []
                self._armed_manifest[plan.shot_id].extend(armed)

    def _execute_fire(self, plan: ShotPlan) -> None:
        """Run the trigger schedule exactly once and trigger every FEP."""
        with self._lock:
            if plan.shot_id in self._fired_shots:
                raise IllegalPhase(f"{plan.shot_id} already fired")
            self._fired_shots.add(plan.shot_id)
        model = timing.jitter_model(plan.jitter, bound_ps=plan.jitter_bound_ps)
        fired = timing.execute(self._schedule, model, self.seed)
        fired_map = {r.channel_id: r.fired_ps for r in fired}
        self._log("shot_phase", {"op": "t0", "shot_id": plan.shot_id,
                                 "channels": len(fired)})
        for fep_id in self.fep_ids:
            try:
                call_json(self.bus, f"fep/{fep_id}",
                          {"op": "trigger", "shot_id": plan.shot_id,
                           "fired_ps": fired_map},
                          self.ack_deadline_s, source="sup/shot_director")
            except Exception as exc:
                self._log("error", {"op": "trigger_failed", "fep": fep_id,
                                    "detail": str(exc)})

    def _publish_tick(self, plan: ShotPlan) -> None:
        now = self.clock.now_ns()
        body = {"t_minus_ms": self.t_minus_ms,
                "t_minus_s": self.t_minus_ms / 1000.0,
                "phase": self.phase, "shot_id": plan.shot_id,
                "ts_ns": now, "wall_ns": time.monotonic_ns()}
        self.bus.publish("clock/tick", json.dumps(body, sort_keys=True).encode(),
                         source="sup/shot_director")
        self._log("shot_phase", {"op": "tick", "t_minus_ms": self.t_minus_ms,
                                 "phase": self.phase, "shot_id": plan.shot_id})

    # -- preconditions ------------------------------------------------------------

    def _check_participants_ready(self, plan: ShotPlan) -> None:
        for name in plan.participants:
            try:
                out = call_json(self.bus, name, {"op": "readiness"},
                                self.ack_deadline_s, source="sup/shot_director")
            except Exception as exc:
                raise ParticipantNotReady(f"{name}: {exc}") from None
            if out.get("health") == "fault":
                raise ParticipantNotReady(f"{name}: {out.get('detail', 'fault')}")

    def _check_fire_permissives(self, plan: ShotPlan) -> None:
        if self.plc_evaluate is None:
            return
        for action_id in plan.fire_permissives:
            allow, failing = self.plc_evaluate(action_id)
            if not allow:
                raise PermissiveDenied(f"{action_id}: {','.join(failing)}")

    # -- hold / resume / abort ------------------------------------------------------

    def hold(self, reason: str) -> dict:
        with self._lock:
            if self.phase != "counting" or self._hold_requested:
                raise IllegalPhase(f"cannot hold while {self.phase}")
            self._hold_requested = True
            self.hold_reason = reason or "operator hold"
        self._log("operator_action", {"op": "hold", "reason": reason})
        return self.countdown_state()

    def resume(self) -> dict:
        with self._lock:
            if self.phase != "held":
                raise IllegalPhase(f"cannot resume while {self.phase}")
            self._resume_requested = True
        self._log("operator_action", {"op": "resume"})
        return self.countdown_state()

    def abort(self, reason: str) -> dict:
        with self._lock:
            if self.phase not in ("setup", "ready", "counting", "held"):
                raise IllegalPhase(f"cannot abort while {self.phase}")
            in_loop = self.phase in ("counting", "held")
            self._abort_requested = reason or "operator abort"
        self._log("operator_action", {"op": "abort_request", "reason": reason})
        if not in_loop:
            plan = self._require_plan()
            self._do_abort(self._abort_requested, plan)
            self.last_result = ShotResult(plan.shot_id, "aborted",
                                          abort_reason=self._abort_requested)
        return self.countdown_state()

    def _do_abort(self, reason: str, plan: ShotPlan) -> None:
        with self._lock:
            self._abort_requested = ""
            self._set_phase("aborted", shot_id=plan.shot_id, reason=reason)
        for name in plan.participants:
            try:
                call_json(self.bus, name,
                          {"op": "action", "action": "abort",
                           "shot_id": plan.shot_id, "params": {}},
                          self.ack_deadline_s, source="sup/shot_director")
            except Exception as exc:
                self._log("error", {"op": "abort_safing_failed",
                                    "participant": name, "detail": str(exc)})
        if self.alerts is not None:
            self.alerts.raise_alert("sup/shot_director", "critical",
                                    f"shot aborted: {reason}")
        self._log("error", {"op": "abort", "reason": reason,
                            "shot_id": plan.shot_id})

    # -- post shot -----------------------------------------------------------------

    def recover_post_shot(self, shot_id: str) -> dict:
        """Read every FEP's shot data into the archive; report completeness."""
        with self._lock:
            if self.phase != "post_shot":
                raise IllegalPhase(f"cannot recover while {self.phase}")
        t0 = time.monotonic()
        expected = sorted(set(self._armed_manifest.get(shot_id, [])))
        recovered: list[str] = []
        for fep_id in self.fep_ids:
            try:
                out = call_json(self.bus, f"fep/{fep_id}",
                                {"op": "read_shot_data", "shot_id": shot_id},
                                10.0, source="sup/shot_director")
            except Exception:
                continue
            for record in out["records"]:
                payload = base64.b64decode(record["payload_b64"])
                if self.archive is not None:
                    self.archive.store(shot_id, record["point_id"], payload,
                                       overwrite=True)
                recovered.append(record["point_id"])
        recovered = sorted(set(recovered))
        missing = sorted(set(expected) - set(recovered))
        elapsed = time.monotonic() - t0
        report = {"shot_id": shot_id, "expected": len(expected),
                  "recovered": len(recovered), "missing": missing,
                  "complete": not missing, "elapsed_s": elapsed}
        self._log("shot_phase", {"op": "recovery", "shot_id": shot_id,
                                 "expected": len(expected),
                                 "recovered": len(recovered),
                                 "missing": missing})
        return report

    # -- rollup ------------------------------------------------------------------

    def _on_readiness(self, env) -> None:
        try:
            body = json.loads(env.payload.decode())
        except ValueError:
            return
        name = body.get("name")
        if name:
            with self._lock:
                self._readiness[name] = body

    def status_rollup(self) -> dict:
        with self._lock:
            subsystems = {name: {"health": b.get("health", "ok"),
                                 "detail": b.get("detail", "")}
                          for name, b in sorted(self._readiness.items())}
            ready = all(s["health"] != "fault" for s in subsystems.values())
            return {"ready": ready, "subsystems": subsystems,
                    "phase": self.phase,
                    "t_minus_s": self.t_minus_ms / 1000.0,
                    "shot_id": self._plan.shot_id if self._plan else None}

    def countdown_state(self) -> dict:
        with self._lock:
            return {"phase": self.phase,
                    "t_minus_s": self.t_minus_ms / 1000.0,
                    "hold_reason": self.hold_reason,
                    "shot_id": self._plan.shot_id if self._plan else None}

    def reset(self) -> None:
        """Recycle the director for the next plan."""
        with self._lock:
            if self.phase not in ("post_shot", "aborted", "idle"):
                raise IllegalPhase(f"cannot reset while {self.phase}")
            if self.phase != "idle":
                self._set_phase("idle")
            self._plan = None
            self._schedule = None
            self.t_minus_ms = 0
            self.hold_reason = ""
            self._hold_requested = False
            self._resume_requested = False
            self._abort_requested = ""

    # -- internals ------------------------------------------------------------------

    def _require_plan(self) -> ShotPlan:
        with self._lock:
            if self._plan is None:
                raise IllegalPhase("no plan loaded")
            return self._plan

    def _set_phase(self, phase: str, shot_id: str | None = None,
                   reason: str = "") -> None:
        if (self.phase, phase) not in _PHASE_TRANSITIONS:
            raise IllegalPhase(f"illegal transition {self.phase} -> {phase}")
        self.phase = phase
        now = self.clock.now_ns()
        body = {"phase": phase, "shot_id": shot_id, "reason": reason,
                "ts_ns": now, "wall_ns": time.monotonic_ns()}
        self.bus.publish("shot/phase", json.dumps(body, sort_keys=True).encode(),
                         source="sup/shot_director")
        self._log("shot_phase", {"op": "phase", "phase": phase,
                                 "shot_id": shot_id, "reason": reason})

    def _log(self, category: str, payload: dict) -> None:
        if self.events is not None:
            self.events.log("sup/shot_director", category, payload)

    def _op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "status":
            return self.status_rollup()
        if op == "countdown_state":
            return self.countdown_state()
        if op == "hold":
            return self.hold(args.get("reason", ""))
        if op == "resume":
            return self.resume()
        if op == "abort":
            return self.abort(args.get("reason", ""))
        raise ValueError(f"unknown director op {op!r}")
