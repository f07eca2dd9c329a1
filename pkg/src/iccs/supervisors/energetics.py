"""Laser setup guidance: a declared linear model from energy goals to
amplifier setpoints, with an explicit validity envelope.

amplifier_gain = base_gain * (energy_goal / reference_energy), per beam.
"""

from __future__ import annotations

from dataclasses import dataclass

from iccs.rpc import register_errors
from iccs.supervisors.base import Supervisor


class GoalOutOfEnvelope(Exception):
    pass


register_errors(GoalOutOfEnvelope)


@dataclass(frozen=True)
class SetpointModel:
    base_gain: float = 1.0
    reference_energy_j: float = 100.0
    envelope_j: tuple[float, float] = (1.0, 500.0)

    def setpoints(self, goals: dict[str, float]) -> dict[str, dict]:
        """Per-beam setpoints for an energy-goal map; deterministic."""
        lo, hi = self.envelope_j
        bundle = {}
        for beam_id in sorted(goals):
            energy = float(goals[beam_id])
            if not (lo <= energy <= hi):
                raise GoalOutOfEnvelope(
                    f"{beam_id}: {energy} J outside [{lo}, {hi}] J")
            bundle[beam_id] = {
                "amplifier_gain": self.base_gain * (energy / self.reference_energy_j),
                "pulse_energy_goal_j": energy,
            }
        return bundle


class EnergeticsSupervisor(Supervisor):
    """Expands shot goals into setpoints and primes the calorimeters."""

    def __init__(self, bus, clock, model: SetpointModel, *,
                 calorimeters_by_beam: dict[str, list[str]] | None = None,
                 events=None, reservations=None, watch_patterns=()):
        super().__init__("lpom", bus, clock, events=events,
                         reservations=reservations,
                         watch_patterns=watch_patterns)
        self.model = model
        self.calorimeters_by_beam = calorimeters_by_beam or {}
        self._current_bundle: dict[str, dict] = {}

    def setup_goals(self, goals: dict[str, float]) -> dict[str, dict]:
        bundle = self.model.setpoints(goals)
        self._current_bundle = bundle
        return bundle

    def extra_op(self, args: dict) -> dict:
        if args.get("op") == "setup_goals":
            return {"bundle": self.setup_goals(args.get("goals") or {})}
        return super().extra_op(args)

    def on_setup(self, shot_id, params):
        # scenario injection: calorimeters read the planned beam energy
        from iccs.rpc import call_json

        applied = 0
        for beam_id, setpoint in sorted(self._current_bundle.items()):
            energy = setpoint["pulse_energy_goal_j"]
            for point_id in self.calorimeters_by_beam.get(beam_id, []):
                self.reserve_point(point_id)
                call_json(self.bus, f"pt/{point_id}",
                          {"op": "set_beam_energy",
                           "args": {"energy_j": energy},
                           "holder": f"sup/{self.name}"},
                          5.0, source=f"sup/{self.name}")
                self.release_point(point_id)
                applied += 1
        return {"setpoints_applied": applied}
