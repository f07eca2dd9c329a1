"""Presence supervisors: status rollup plus simple safing duties.

Subsystems without distinctive sequencing logic (Pockels cell, shot
services, target diagnostics) still hold a place on the bus, answer
countdown actions, roll up their points' health, and safe their devices on
abort (shot services owns the shutters).
"""

from __future__ import annotations

from iccs.rpc import call_json

from iccs.supervisors.base import Supervisor


class StatusSupervisor(Supervisor):
    """Rollup-only supervisor; optionally drives shutters open/closed."""

    def __init__(self, name, bus, clock, *, shutters: list[str] | None = None,
                 events=None, reservations=None, watch_patterns=()):
        super().__init__(name, bus, clock, events=events,
                         reservations=reservations,
                         watch_patterns=watch_patterns)
        self.shutters = sorted(shutters or [])

    def _drive_shutters(self, op: str) -> list[str]:
        driven = []
        for point_id in self.shutters:
            self.reserve_point(point_id)
            try:
                call_json(self.bus, f"pt/{point_id}",
                          {"op": op, "holder": f"sup/{self.name}"},
                          5.0, source=f"sup/{self.name}")
                driven.append(point_id)
            finally:
                self.release_point(point_id)
        return driven

    def on_setup(self, shot_id, params):
        if self.shutters:
            return {"opened": self._drive_shutters("open")}
        return None

    def on_abort(self, shot_id, params):
        if self.shutters:
            return {"closed": self._drive_shutters("close")}
        return None
