"""Shared fixtures: mini facility rigs, plan builders, acceptance report."""

from __future__ import annotations

import json

import pytest

from iccs import timing
from iccs.director import CountdownMark, ShotPlan
from iccs.harness.config import mini_profile
from iccs.harness.facility import launch

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(criterion: str, passed: bool, detail: str = "") -> None:
    """Collect one acceptance-criterion verdict for the final summary."""
    _ACCEPTANCE.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _ACCEPTANCE:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {criterion}: {detail}")

MINI_PARTICIPANTS = ["sup/alignment", "sup/lpom", "sup/power",
                     "sup/laser_diag", "sup/pockels", "sup/shot_services"]


def mini_plan(shot_id="shot-0001", marks=None, beams=1) -> ShotPlan:
    marks = marks or [CountdownMark(5000, "setup"), CountdownMark(3000, "arm"),
                      CountdownMark(2000, "charge"),
                      CountdownMark(500, "final_check"), CountdownMark(0, "fire")]
    sources = []
    goals = {}
    for i in range(beams):
        beam = f"b{i + 1:02d}"
        sources += [f"{beam}/diag/dig000", f"{beam}/diag/dig001",
                    f"{beam}/diag/cal000"]
        goals[beam] = 125.0
    triggers = [timing.TriggerRequest(src, -100_000 + k * 50_000, 1000)
                for k, src in enumerate(sources)]
    return ShotPlan(shot_id, list(MINI_PARTICIPANTS), marks, goals, triggers,
                    target_v=10_000.0, fire_permissives=["shot/fire"])


@pytest.fixture
def mini_facility():
    facility = launch(mini_profile(), mode="virtual")
    yield facility
    facility.shutdown()


def tick_events(events):
    """(t_minus_ms, phase) for every published tick, from the event log."""
    ticks = []
    for rec in events.records():
        if rec.category != "shot_phase":
            continue
        body = json.loads(rec.payload)
        if body.get("op") == "tick":
            ticks.append((body["t_minus_ms"], body["phase"]))
    return ticks
