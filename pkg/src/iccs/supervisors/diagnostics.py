"""Diagnostics supervisor: arms acquisition points and collects shot data.

Sources are armable points grouped by owning FEP. Collection fetches every
source's record, attaches summary statistics, and archives the bundle; an
unreachable FEP yields PartialCollection naming exactly the missing points
while the bundle is still stored with the gaps flagged.
"""

from __future__ import annotations

import base64
import json

from iccs.rpc import call_json, register_errors
from iccs.supervisors.base import Supervisor


class PartialCollection(Exception):
    def __init__(self, missing: list[str] | str):
        if isinstance(missing, str):
            missing = [m for m in missing.split(",") if m]
        super().__init__(",".join(sorted(missing)))
        self.missing = sorted(missing)


register_errors(PartialCollection)


class DiagnosticsSupervisor(Supervisor):
    """Collects integrated, transient, and image data from armed sources."""

    def __init__(self, bus, clock, sources_by_fep: dict[str, list[str]], *,
                 name: str = "laser_diag", archive=None, alerts=None,
                 events=None, reservations=None, watch_patterns=()):
        super().__init__(name, bus, clock, events=events,
                         reservations=reservations,
                         watch_patterns=watch_patterns)
        self.sources_by_fep = {fep: sorted(points)
                               for fep, points in sources_by_fep.items()}
        self.archive = archive
        self.alerts = alerts
        self._armed: dict[str, list[str]] = {}
        self._reserved: dict[str, list[str]] = {}

    def all_sources(self) -> list[str]:
        return sorted(p for pts in self.sources_by_fep.values() for p in pts)

    # -- arming -------------------------------------------------------------

    def on_arm(self, shot_id, params):
        armed = []
        reserved = self._reserved.setdefault(shot_id, [])
        for fep_id, points in sorted(self.sources_by_fep.items()):
            for point_id in points:
                self.reserve_point(point_id)
                reserved.append(point_id)
            out = call_json(self.bus, f"fep/{fep_id}",
                            {"op": "arm", "shot_id": shot_id, "points": points},
                            10.0, source=f"sup/{self.name}")
            armed.extend(out["armed"])
        self._armed[shot_id] = sorted(armed)
        return {"armed": sorted(armed)}

    def on_fire(self, shot_id, params):
        # captures happened at trigger time; the armed points need no
        # further protection, so back-to-back shots do not wedge on leases
        self._release_shot(shot_id)
        return None

    def on_abort(self, shot_id, params):
        disarmed = []
        for fep_id in sorted(self.sources_by_fep):
            try:
                out = call_json(self.bus, f"fep/{fep_id}",
                                {"op": "disarm_all", "shot_id": shot_id or None},
                                5.0, source=f"sup/{self.name}")
                disarmed.extend(out["disarmed"])
            except Exception:
                pass
        self._armed.pop(shot_id, None)
        self._release_shot(shot_id)
        return {"disarmed": sorted(disarmed)}

    def _release_shot(self, shot_id: str) -> None:
        for point_id in self._reserved.pop(shot_id, []):
            self.release_point(point_id)

    def armed_points(self, shot_id: str) -> list[str]:
        return list(self._armed.get(shot_id, []))

    # -- collection ------------------------------------------------------------

    def collect(self, shot_id: str) -> dict:
        """Fetch every armed source's record and archive the bundle."""
        expected = self._armed.get(shot_id)
        if expected is None:
            expected = self.all_sources()
        records, missing = [], []
        for fep_id, points in sorted(self.sources_by_fep.items()):
            wanted = [p for p in points if p in expected]
            if not wanted:
                continue
            try:
                out = call_json(self.bus, f"fep/{fep_id}",
                                {"op": "read_shot_data", "shot_id": shot_id},
                                10.0, source=f"sup/{self.name}")
            except Exception:
                missing.extend(wanted)
                continue
            got = {r["point_id"]: r for r in out["records"]}
            for point_id in wanted:
                if point_id in got:
                    records.append(got[point_id])
                else:
                    missing.append(point_id)
        bundle = {
            "shot_id": shot_id,
            "collector": f"sup/{self.name}",
            "records": sorted(records, key=lambda r: r["point_id"]),
            "missing": sorted(missing),
        }
        if not records and self.alerts is not None:
            self.alerts.raise_alert(f"sup/{self.name}", "warning",
                                    f"no shot data collected for {shot_id}")
        if self.archive is not None:
            payload = json.dumps(bundle, sort_keys=True).encode()
            self.archive.store(shot_id, f"sup/{self.name}", payload,
                               overwrite=True)
        if missing:
            raise PartialCollection(missing)
        return bundle

    def extra_op(self, args: dict) -> dict:
        if args.get("op") == "collect":
            return self.collect(args["shot_id"])
        if args.get("op") == "armed":
            return {"points": self.armed_points(args["shot_id"])}
        return super().extra_op(args)
