"""Facility launch: wire every component onto one bus and run it.

Single-process launch over the in-process transport is the default; the
`tcp_port` flag additionally exposes the same broker to socket peers
(operator consoles, external test clients). Virtual-clock mode is driven by
`Facility.advance`; wall-clock mode starts a pump thread that advances the
device layer in real time.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path

from iccs.bus.core import Bus
from iccs.bus.tcp import BusServer, PortUnavailable
from iccs.clock import VirtualClock, WallClock
from iccs.director import ShotDirector
from iccs.fep.runtime import Fep, PointSpec
from iccs.harness.config import FacilityConfig
from iccs.harness.metrics import MetricsCollector
from iccs.plc import (
    ChainTerm,
    InterlockInput,
    PermissiveChain,
    PlcSegment,
    SlowChannel,
)
from iccs.services.runtime import FrameworkServices
from iccs.supervisors.alignment import AlignmentChannel, AlignmentSupervisor
from iccs.supervisors.diagnostics import DiagnosticsSupervisor
from iccs.supervisors.energetics import EnergeticsSupervisor, SetpointModel
from iccs.supervisors.power import PowerSupervisor
from iccs.supervisors.rollup import StatusSupervisor


class StartupTimeout(Exception):
    pass


class Facility:
    """Handle for a running facility; owns every component's lifecycle."""

    def __init__(self, config: FacilityConfig, mode: str = "virtual",
                 run_dir: Path | None = None, tcp_port: int | None = None):
        if mode not in ("virtual", "wall"):
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config
        self.mode = mode
        self.run_dir = Path(run_dir) if run_dir else None
        self.clock = VirtualClock() if mode == "virtual" else WallClock()
        self.bus = Bus(self.clock)
        self.tcp_server: BusServer | None = None
        if tcp_port is not None:
            self.tcp_server = BusServer(self.bus, port=tcp_port)
        self.services = FrameworkServices(self.bus, self.clock, self.run_dir)
        self.metrics = MetricsCollector(self.bus, config.budgets)
        self.plc: PlcSegment | None = None
        self.feps: dict[str, Fep] = {}
        self.supervisors: dict[str, object] = {}
        self.director: ShotDirector | None = None
        self._pump_thread: threading.Thread | None = None
        self._pump_stop = threading.Event()
        self._advance_lock = threading.Lock()
        self.restart_elapsed_s: float | None = None

    # -- construction ------------------------------------------------------

    def start(self) -> "Facility":
        t0 = time.monotonic()
        self.metrics.start()
        self.services.start()
        self._start_plc()
        self._start_feps()
        # the director subscribes to readiness before any supervisor's
        # initial publication, so the rollup sees every subsystem
        self._start_director()
        self._start_supervisors()
        if self.plc is not None:
            self.plc.scan_cycle()  # seed interlock readiness
        self._wait_ready(timeout_s=self.config.budgets.restart_s)
        self.restart_elapsed_s = time.monotonic() - t0
        if self.mode == "wall":
            self._pump_thread = threading.Thread(
                target=self._pump, name="facility-pump", daemon=True)
            self._pump_thread.start()
        return self

    def _start_plc(self) -> None:
        cfg = self.config.plc
        if not cfg.inputs:
            return
        inputs = [InterlockInput(i.input_id,
                                 value=(i.initial if i.initial is not None
                                        else i.safe),
                                 safe_value=i.safe)
                  for i in cfg.inputs]
        chains = [PermissiveChain(c.action_id,
                                  tuple(ChainTerm(i, r) for i, r in c.terms))
                  for c in cfg.chains]
        channels = [SlowChannel(c.channel_id, c.kind, c.value, c.setpoint,
                                c.tau_s, (c.minimum, c.maximum), c.units)
                    for c in cfg.channels]
        self.plc = PlcSegment(self.bus, self.clock, inputs, chains, channels,
                              events=self.services.events,
                              scan_period_s=cfg.scan_period_s)
        self.plc.start()

    def _start_feps(self) -> None:
        for fep_cfg in self.config.feps:
            fep = Fep(fep_cfg.fep_id, self.bus, self.clock, fep_cfg.points,
                      events=self.services.events,
                      reservations=self.services.reservations,
                      seed=self.config.seed,
                      heartbeat_s=self.config.heartbeat_s)
            fep.start()
            self.feps[fep_cfg.fep_id] = fep

    def _alignment_channels(self) -> list[AlignmentChannel]:
        channels = []
        for fep_cfg in self.config.feps:
            motor_rates = {p.point_id: float(p.params.get("rate", 100))
                           for p in fep_cfg.points if p.kind == "stepper_motor"}
            for point in fep_cfg.points:
                if point.kind != "camera" or "motor_x" not in point.params:
                    continue
                width = int(point.params.get("width", 64))
                height = int(point.params.get("height", 64))
                gain = (float(point.params.get("g11", 0.05)),
                        float(point.params.get("g12", 0.0)),
                        float(point.params.get("g21", 0.0)),
                        float(point.params.get("g22", 0.05)))
                beam_id = point.point_id.split("/")[0]
                channels.append(AlignmentChannel(
                    beam_id, point.point_id,
                    point.params["motor_x"], point.params["motor_y"],
                    target=((width - 1) / 2, (height - 1) / 2),
                    gain=gain,
                    motor_rate=motor_rates.get(point.params["motor_x"], 100.0)))
        return channels

    def _watches(self, group: str) -> tuple[str, ...]:
        patterns = set()
        for point_id in self.config.all_points():
            segments = point_id.split("/")
            if len(segments) >= 2 and segments[1] == group:
                patterns.add("status/" + "/".join(segments[:-1]) + "/*")
        return tuple(sorted(patterns))

    def _start_supervisors(self) -> None:
        enabled = self.config.supervisors
        events = self.services.events
        reservations = self.services.reservations
        owners = self.config.point_owner()

        if "alignment" in enabled:
            sup = AlignmentSupervisor(
                self.bus, self.clock, self._alignment_channels(),
                events=events, reservations=reservations,
                advance_fn=self.advance_or_wait,
                watch_patterns=self._watches("align") + self._watches("beam"))
            self.supervisors["alignment"] = sup
        if "lpom" in enabled:
            cals_by_beam: dict[str, list[str]] = {}
            for source in self.config.diag_sources:
                if self.config.all_points()[source].kind == "calorimeter":
                    cals_by_beam.setdefault(source.split("/")[0], []).append(source)
            sup = EnergeticsSupervisor(
                self.bus, self.clock, SetpointModel(),
                calorimeters_by_beam=cals_by_beam,
                events=events, reservations=reservations)
            self.supervisors["lpom"] = sup
        if "power" in enabled:
            rates = {m.module_id: m.charge_rate_vps
                     for m in self.config.power_modules}
            rate = min(rates.values()) if rates else 20_000.0
            sup = PowerSupervisor(
                self.bus, self.clock, sorted(rates),
                charge_rate_vps=rate,
                default_target_v=(self.config.power_modules[0].target_v
                                  if self.config.power_modules else 18_000.0),
                permissive_check=self._permissive_check,
                events=events, reservations=reservations)
            self.supervisors["power"] = sup
        if "laser_diag" in enabled:
            sup = DiagnosticsSupervisor(
                self.bus, self.clock,
                self._sources_by_fep(self.config.diag_sources, owners),
                name="laser_diag", archive=self.services.archive,
                alerts=self.services.alerts, events=events,
                reservations=reservations,
                watch_patterns=self._watches("diag"))
            self.supervisors["laser_diag"] = sup
        if "target_diag" in enabled and self.config.target_diag_sources:
            sup = DiagnosticsSupervisor(
                self.bus, self.clock,
                self._sources_by_fep(self.config.target_diag_sources, owners),
                name="target_diag", archive=self.services.archive,
                alerts=self.services.alerts, events=events,
                reservations=reservations,
                watch_patterns=self._watches("target"))
            self.supervisors["target_diag"] = sup
        if "pockels" in enabled:
            self.supervisors["pockels"] = StatusSupervisor(
                "pockels", self.bus, self.clock, events=events,
                reservations=reservations)
        if "shot_services" in enabled:
            self.supervisors["shot_services"] = StatusSupervisor(
                "shot_services", self.bus, self.clock,
                shutters=self.config.shutters(), events=events,
                reservations=reservations,
                watch_patterns=self._watches("svc") + self._watches("probe1")
                + self._watches("probe2") + self._watches("video"))
        for sup in self.supervisors.values():
            sup.start()

    @staticmethod
    def _sources_by_fep(sources: list[str], owners: dict[str, str]) -> dict:
        grouped: dict[str, list[str]] = {}
        for source in sources:
            grouped.setdefault(owners[source], []).append(source)
        return grouped

    def _permissive_check(self, action_id: str):
        if self.plc is None:
            return True, []
        decision = self.plc.evaluate_permissive(action_id)
        return decision.allow, list(decision.failing)

    def _start_director(self) -> None:
        self.director = ShotDirector(
            self.bus, self.clock,
            events=self.services.events, alerts=self.services.alerts,
            archive=self.services.archive,
            plc_evaluate=self._permissive_check if self.plc else None,
            advance_fn=self.advance_or_wait,
            fep_ids=sorted(self.feps),
            tick_period_s=self.config.tick_period_s,
            seed=self.config.seed,
            parallel_marks=(self.mode == "wall"))
        self.director.start()

    def _wait_ready(self, timeout_s: float) -> None:
        deadline = time.monotonic() + timeout_s
        expected = set(self.supervisors)
        if self.plc is not None:
            expected.add("plc")
        while time.monotonic() < deadline:
            rollup = self.director.status_rollup()
            seen = set(rollup["subsystems"])
            if expected <= seen and rollup["ready"]:
                return
            time.sleep(0.002)
        missing = expected - set(self.director.status_rollup()["subsystems"])
        raise StartupTimeout(f"subsystems never reported: {sorted(missing)}")

    # -- time ---------------------------------------------------------------------

    def advance(self, dt_s: float) -> None:
        """Advance the virtual clock and every simulated component."""
        if self.mode != "virtual":
            raise ValueError("advance() drives virtual mode; wall mode is pumped")
        with self._advance_lock:
            self.clock.advance(dt_s)
            self._advance_components(dt_s)

    def _advance_components(self, dt_s: float) -> None:
        if self.plc is not None:
            self.plc.advance(dt_s)
        for fep in self.feps.values():
            fep.advance(dt_s)
        power = self.supervisors.get("power")
        if power is not None:
            power.advance(dt_s)

    def advance_or_wait(self, dt_s: float) -> None:
        """Virtual mode steps the facility; wall mode just waits."""
        if self.mode == "virtual":
            self.advance(dt_s)
        else:
            time.sleep(dt_s)

    def _pump(self) -> None:
        period = self.config.tick_period_s
        next_at = time.monotonic() + period
        while not self._pump_stop.is_set():
            delay = next_at - time.monotonic()
            if delay > 0 and self._pump_stop.wait(delay):
                return
            next_at += period
            with self._advance_lock:
                self._advance_components(period)

    # -- fault injection and process management -------------------------------------

    def inject_fault(self, point_id: str, reason: str = "injected fault") -> None:
        owner = self.config.point_owner()[point_id]
        self.feps[owner].inject_fault(point_id, reason)

    def clear_fault(self, point_id: str) -> None:
        owner = self.config.point_owner()[point_id]
        self.feps[owner].clear_fault(point_id)

    def kill_fep(self, fep_id: str) -> None:
        self.feps[fep_id].stop()

    def relaunch_fep(self, fep_id: str) -> Fep:
        """Restart a killed FEP; it re-registers with a higher incarnation."""
        spec = next(f for f in self.config.feps if f.fep_id == fep_id)
        fep = Fep(fep_id, self.bus, self.clock, spec.points,
                  events=self.services.events,
                  reservations=self.services.reservations,
                  seed=self.config.seed, heartbeat_s=self.config.heartbeat_s)
        fep.start()
        self.feps[fep_id] = fep
        return fep

    # -- shutdown -----------------------------------------------------------------

    def shutdown(self) -> None:
        self._pump_stop.set()
        if self._pump_thread is not None:
            self._pump_thread.join(timeout=2.0)
        if self.director is not None:
            self.director.stop()
        for sup in self.supervisors.values():
            sup.stop()
        for fep in self.feps.values():
            fep.stop()
        if self.plc is not None:
            self.plc.stop()
        self.metrics.stop()
        self.services.stop()
        if self.tcp_server is not None:
            self.tcp_server.close()
        self.bus.shutdown()


def launch(config: FacilityConfig, mode: str = "virtual",
           run_dir: Path | None = None,
           tcp_port: int | None = None) -> Facility:
    """Validate, construct, and start a facility; returns the live handle."""
    config.validate()
    return Facility(config, mode=mode, run_dir=run_dir,
                    tcp_port=tcp_port).start()
