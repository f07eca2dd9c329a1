"""Common supervisor machinery: bus presence, action handling, readiness.

A supervisor is one logical context serving "sup/<name>". It watches the
status topics of the points it owns, rolls their worst health into a
readiness record, and republishes readiness whenever that rollup changes.
Countdown actions (setup/arm/charge/final_check/fire/abort) arrive as bus
requests and dispatch to overridable hooks.
"""

from __future__ import annotations

import json
import threading
import time

from iccs.bus.core import Bus
from iccs.clock import Clock
from iccs.rpc import json_handler

_HEALTH_RANK = {"ok": 0, "warning": 1, "fault": 2}

ACTIONS = ("setup", "arm", "charge", "final_check", "fire", "abort")


class Supervisor:
    """Base subsystem supervisor with a status rollup."""

    def __init__(self, name: str, bus: Bus, clock: Clock, *,
                 events=None, reservations=None,
                 watch_patterns: tuple[str, ...] = ()):
        self.name = name
        self.bus = bus
        self.clock = clock
        self.events = events
        self.reservations = reservations
        self.watch_patterns = watch_patterns
        self._lock = threading.RLock()
        self._point_health: dict[str, tuple[str, str]] = {}
        self._last_rollup: tuple[str, str] | None = None
        self._host = None
        self._subs = []

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        self._host = self.bus.host(f"sup-node/{self.name}")
        self._host.serve(f"sup/{self.name}", json_handler(self._op))
        for pattern in self.watch_patterns:
            self._subs.append(self.bus.subscribe(pattern, callback=self._on_status))
        self.publish_readiness(cause_wall_ns=None)

    def stop(self) -> None:
        for sub in self._subs:
            self.bus.unsubscribe(sub)
        self._subs.clear()
        if self._host is not None:
            self._host.stop()
            self._host = None

    # -- readiness ---------------------------------------------------------------

    def _on_status(self, env) -> None:
        try:
            body = json.loads(env.payload.decode())
        except ValueError:
            return
        point_id = body.get("point_id")
        if not point_id:
            return
        with self._lock:
            self._point_health[point_id] = (body.get("health", "ok"),
                                            body.get("detail", ""))
        self.publish_readiness(cause_wall_ns=body.get("wall_ns"))

    def readiness(self) -> tuple[str, str]:
        """Worst health across watched points plus subsystem-specific checks."""
        worst, detail = self.self_check()
        with self._lock:
            for point_id, (health, point_detail) in self._point_health.items():
                if _HEALTH_RANK[health] > _HEALTH_RANK[worst]:
                    worst, detail = health, f"{point_id}: {point_detail}".rstrip(": ")
        return worst, detail

    def self_check(self) -> tuple[str, str]:
        """Subsystem-specific readiness contribution; override as needed."""
        return "ok", ""

    def publish_readiness(self, cause_wall_ns: int | None = None) -> None:
        health, detail = self.readiness()
        with self._lock:
            if self._last_rollup == (health, detail):
                return
            self._last_rollup = (health, detail)
        now = self.clock.now_ns()
        body = {"name": self.name, "health": health, "detail": detail,
                "ts_ns": now, "wall_ns": time.monotonic_ns()}
        if cause_wall_ns is not None:
            body["cause_wall_ns"] = cause_wall_ns
        self.bus.publish(f"readiness/{self.name}",
                         json.dumps(body, sort_keys=True).encode(),
                         source=f"sup/{self.name}")

    # -- countdown actions -----------------------------------------------------

    def _op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "action":
            return self.handle_action(args.get("action", ""),
                                      args.get("shot_id", ""),
                                      args.get("params") or {})
        if op == "readiness":
            health, detail = self.readiness()
            return {"health": health, "detail": detail}
        return self.extra_op(args)

    def extra_op(self, args: dict) -> dict:
        raise ValueError(f"{self.name}: unknown op {args.get('op')!r}")

    def handle_action(self, action: str, shot_id: str, params: dict) -> dict:
        if action not in ACTIONS:
            raise ValueError(f"{self.name}: unknown action {action!r}")
        hook = getattr(self, f"on_{action}")
        result = hook(shot_id, params) or {}
        result.setdefault("ok", True)
        if self.events is not None:
            self.events.log(f"sup/{self.name}", "shot_phase",
                            {"op": "action_ack", "action": action,
                             "shot_id": shot_id})
        return result

    # default hooks: presence supervisors simply acknowledge
    def on_setup(self, shot_id: str, params: dict) -> dict | None:
        return None

    def on_arm(self, shot_id: str, params: dict) -> dict | None:
        return None

    def on_charge(self, shot_id: str, params: dict) -> dict | None:
        return None

    def on_final_check(self, shot_id: str, params: dict) -> dict | None:
        return None

    def on_fire(self, shot_id: str, params: dict) -> dict | None:
        return None

    def on_abort(self, shot_id: str, params: dict) -> dict | None:
        return None

    # -- helpers ---------------------------------------------------------------

    def reserve_point(self, resource: str, lease_s: float = 60.0) -> None:
        """Automated reservation (short lease) before any device change."""
        if self.reservations is not None:
            self.reservations.reserve(resource, f"sup/{self.name}", lease_s)

    def release_point(self, resource: str) -> None:
        if self.reservations is not None:
            try:
                self.reservations.release(resource, f"sup/{self.name}")
            except Exception:
                pass  # lease may have expired already
