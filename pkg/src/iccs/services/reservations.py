"""Exclusive device reservations with optional leases.

At most one live reservation per resource. A reservation with a lease stops
being live once the lease elapses, so a crashed automated client cannot
wedge the facility. Every acquire/release is recorded for post-run audits.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from iccs.clock import Clock
from iccs.rpc import register_errors
from iccs.services.events import EventLog


class AlreadyReserved(Exception):
    """Carries the current holder so callers can report the conflict."""

    def __init__(self, resource: str, holder: str | None = None):
        if holder is None:
            # Reconstructed from a bus error message "resource held by X".
            super().__init__(resource)
            text = resource
            self.resource, _, self.holder = text.partition(" held by ")
        else:
            super().__init__(f"{resource} held by {holder}")
            self.resource = resource
            self.holder = holder


class NotHolder(Exception):
    pass


class NotReserved(Exception):
    pass


register_errors(AlreadyReserved, NotHolder, NotReserved)


@dataclass(frozen=True)
class Reservation:
    resource: str
    holder: str
    acquired_ns: int
    lease_ns: int | None

    def live(self, now_ns: int) -> bool:
        return self.lease_ns is None or now_ns < self.acquired_ns + self.lease_ns


class ReservationService:
    """Single authority serializing reservation decisions."""

    def __init__(self, clock: Clock, events: EventLog | None = None):
        self.clock = clock
        self.events = events
        self._lock = threading.Lock()
        self._held: dict[str, Reservation] = {}
        # (op, resource, holder, t_ns, lease_ns) tuples for exclusion audits
        self.audit_log: list[tuple[str, str, str, int, int | None]] = []

    def reserve(self, resource: str, holder: str,
                lease_s: float | None = None) -> Reservation:
        lease_ns = None if lease_s is None else round(lease_s * 1e9)
        with self._lock:
            now = self.clock.now_ns()
            current = self._held.get(resource)
            if current is not None and current.live(now) and current.holder != holder:
                raise AlreadyReserved(resource, current.holder)
            reservation = Reservation(resource, holder, now, lease_ns)
            self._held[resource] = reservation
            self.audit_log.append(("reserve", resource, holder, now, lease_ns))
        self._log("reserve", resource, holder)
        return reservation

    def release(self, resource: str, holder: str) -> None:
        with self._lock:
            now = self.clock.now_ns()
            current = self._held.get(resource)
            if current is None or not current.live(now):
                raise NotReserved(resource)
            if current.holder != holder:
                raise NotHolder(f"{resource} held by {current.holder}, not {holder}")
            del self._held[resource]
            self.audit_log.append(("release", resource, holder, now, None))
        self._log("release", resource, holder)

    def holder_of(self, resource: str) -> str | None:
        with self._lock:
            current = self._held.get(resource)
            if current is None or not current.live(self.clock.now_ns()):
                return None
            return current.holder

    def check(self, resource: str, holder: str) -> bool:
        """True when `holder` may command `resource` (free or held by them)."""
        owner = self.holder_of(resource)
        return owner is None or owner == holder

    def held(self) -> dict[str, Reservation]:
        with self._lock:
            now = self.clock.now_ns()
            return {r: v for r, v in self._held.items() if v.live(now)}

    def _log(self, op: str, resource: str, holder: str) -> None:
        if self.events is not None:
            try:
                self.events.log(holder, "operator_action",
                                {"op": op, "resource": resource})
            except Exception:
                pass
