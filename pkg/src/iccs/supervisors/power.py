"""Power conditioning: high-voltage charge sequencing for the amplifier
supplies.

Charge state machine: idle -> charging -> charged -> fired, with
{charging, charged} -> dumped on abort and any -> fault on error. Voltage
ramps at a configured rate and never exceeds the target; "charged" means
within 1% of target.
"""

from __future__ import annotations

import threading
import time

from iccs.rpc import register_errors
from iccs.supervisors.base import Supervisor

LEGAL_TRANSITIONS = {
    ("idle", "charging"), ("charging", "charged"), ("charged", "fired"),
    ("charging", "dumped"), ("charged", "dumped"),
    ("idle", "fault"), ("charging", "fault"), ("charged", "fault"),
    ("fired", "idle"), ("dumped", "idle"),  # recycle for the next shot
}


class PermissiveDenied(Exception):
    pass


class AlreadyActive(Exception):
    pass


register_errors(PermissiveDenied, AlreadyActive)


class ChargeModule:
    """One capacitor-bank supply: ramped charge, dump, fire."""

    def __init__(self, module_id: str, charge_rate_vps: float = 10_000.0,
                 dump_rate_vps: float = 100_000.0):
        self.module_id = module_id
        self.charge_rate_vps = charge_rate_vps
        self.dump_rate_vps = dump_rate_vps
        self.state = "idle"
        self.voltage_v = 0.0
        self.target_v = 0.0
        self.trace: list[tuple[str, float]] = [("idle", 0.0)]

    def _transition(self, new_state: str) -> None:
        if (self.state, new_state) not in LEGAL_TRANSITIONS:
            raise AlreadyActive(
                f"{self.module_id}: illegal {self.state} -> {new_state}")
        self.state = new_state
        self.trace.append((new_state, self.voltage_v))

    def start_charge(self, target_v: float) -> None:
        if self.state not in ("idle",):
            raise AlreadyActive(f"{self.module_id} is {self.state}")
        self.target_v = float(target_v)
        self._transition("charging")

    def advance(self, dt_s: float) -> None:
        if self.state == "charging":
            self.voltage_v = min(self.voltage_v + self.charge_rate_vps * dt_s,
                                 self.target_v)
            if self.target_v > 0 and self.voltage_v >= 0.99 * self.target_v:
                self._transition("charged")
        elif self.state == "dumped":
            self.voltage_v = max(self.voltage_v - self.dump_rate_vps * dt_s, 0.0)

    def dump(self) -> None:
        if self.state in ("charging", "charged"):
            self._transition("dumped")

    def fire(self) -> None:
        if self.state == "charged":
            self.voltage_v = 0.0
            self._transition("fired")

    def recycle(self) -> None:
        if self.state in ("fired", "dumped") and self.voltage_v == 0.0:
            self._transition("idle")


class PowerSupervisor(Supervisor):
    """Sequences every charge module and answers countdown actions."""

    def __init__(self, bus, clock, module_ids: list[str], *,
                 charge_rate_vps: float = 10_000.0,
                 default_target_v: float = 18_000.0,
                 permissive_check=None, events=None, reservations=None,
                 watch_patterns=()):
        super().__init__("power", bus, clock, events=events,
                         reservations=reservations,
                         watch_patterns=watch_patterns)
        self.modules = {m: ChargeModule(m, charge_rate_vps) for m in module_ids}
        self.default_target_v = default_target_v
        # callable(action_id) -> (allow, failing) from the interlock segment
        self.permissive_check = permissive_check
        self._mod_lock = threading.RLock()

    def charge_sequence(self, module_id: str, target_v: float) -> ChargeModule:
        """Begin charging one module; ramping proceeds with `advance`."""
        with self._mod_lock:
            module = self.modules[module_id]
            if self.permissive_check is not None:
                allow, failing = self.permissive_check(f"power/{module_id}/charge")
                if not allow:
                    raise PermissiveDenied(
                        f"{module_id}: {','.join(failing)}")
            self.reserve_point(f"power/{module_id}")
            module.start_charge(target_v)
        if self.events is not None:
            self.events.log(f"sup/{self.name}", "device_status", {
                "op": "charge_start", "module": module_id,
                "target_v": target_v})
        return module

    def advance(self, dt_s: float) -> None:
        with self._mod_lock:
            before = {m: mod.state for m, mod in self.modules.items()}
            for module in self.modules.values():
                module.advance(dt_s)
            changed = [m for m, mod in self.modules.items()
                       if mod.state != before[m]]
        if changed:
            self.publish_readiness()
            for module_id in changed:
                self._release_if_settled(module_id)

    def _release_if_settled(self, module_id: str) -> None:
        module = self.modules[module_id]
        if module.state in ("fired", "dumped") and self.reservations is not None:
            self.release_point(f"power/{module_id}")

    def dump_all(self) -> list[str]:
        dumped = []
        with self._mod_lock:
            for module in self.modules.values():
                if module.state in ("charging", "charged"):
                    module.dump()
                    dumped.append(module.module_id)
        if self.events is not None and dumped:
            self.events.log(f"sup/{self.name}", "error",
                            {"op": "dump_all", "modules": sorted(dumped)})
        self.publish_readiness()
        return dumped

    def states(self) -> dict[str, str]:
        with self._mod_lock:
            return {m: mod.state for m, mod in self.modules.items()}

    def all_charged(self) -> bool:
        with self._mod_lock:
            return all(m.state == "charged" for m in self.modules.values())

    def recycle_all(self) -> None:
        with self._mod_lock:
            for module in self.modules.values():
                if module.state == "fired" or (
                        module.state == "dumped" and module.voltage_v == 0.0):
                    module.voltage_v = 0.0
                    module.recycle()
                module.trace = [("idle", module.voltage_v)]

    # -- countdown hooks ---------------------------------------------------------

    def on_charge(self, shot_id, params):
        target = float(params.get("target_v", self.default_target_v))
        started = []
        for module_id in sorted(self.modules):
            self.charge_sequence(module_id, target)
            started.append(module_id)
        return {"charging": started}

    def on_final_check(self, shot_id, params):
        if not self.all_charged():
            lagging = sorted(m for m, s in self.states().items() if s != "charged")
            raise AlreadyActive(f"modules not charged: {','.join(lagging)}")
        return {"charged": sorted(self.modules)}

    def on_fire(self, shot_id, params):
        with self._mod_lock:
            for module in self.modules.values():
                module.fire()
        self.publish_readiness()
        return {"fired": sorted(self.modules)}

    def on_abort(self, shot_id, params):
        return {"dumped": self.dump_all()}

    def self_check(self):
        with self._mod_lock:
            faulted = sorted(m for m, mod in self.modules.items()
                             if mod.state == "fault")
        if faulted:
            return "fault", f"modules faulted: {','.join(faulted)}"
        return "ok", ""
