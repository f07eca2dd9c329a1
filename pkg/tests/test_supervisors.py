"""Supervisors: centroid math, alignment loop, setpoints, charging, collection."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iccs.bus import Bus
from iccs.clock import VirtualClock
from iccs.fep import Fep, PointSpec
from iccs.services.alerts import AlertService
from iccs.services.archive import ArchiveService
from iccs.services.events import EventLog
from iccs.services.reservations import ReservationService
from iccs.supervisors import (
    AlignmentChannel,
    AlignmentSupervisor,
    AlreadyActive,
    ChargeModule,
    DiagnosticsSupervisor,
    GoalOutOfEnvelope,
    PartialCollection,
    PermissiveDenied,
    PowerSupervisor,
    ReservationMissing,
    SetpointModel,
    ZeroIntensity,
    compute_centroid,
)
from iccs.supervisors.power import LEGAL_TRANSITIONS


class TestCentroid:
    def test_uniform_frame_geometric_center(self):
        frame = np.full((10, 20), 7, dtype=np.uint16)
        assert compute_centroid(frame) == ((20 - 1) / 2, (10 - 1) / 2)

    def test_single_bright_pixel(self):
        frame = np.zeros((64, 64), dtype=np.uint16)
        frame[34, 12] = 1000
        assert compute_centroid(frame) == (12.0, 34.0)

    def test_gaussian_spot_recovered(self):
        from iccs.fep.devices import Camera

        cam = Camera("c", {"width": 64, "height": 64, "base_cx": 20.5,
                           "base_cy": 31.25, "spot_sigma": 3.0,
                           "amplitude": 10000.0, "noise_level": 0.0}, seed=0)
        cx, cy = compute_centroid(cam.frame())
        assert abs(cx - 20.5) < 0.05
        assert abs(cy - 31.25) < 0.05

    def test_zero_intensity_rejected(self):
        with pytest.raises(ZeroIntensity):
            compute_centroid(np.zeros((8, 8)))

    @settings(max_examples=30, deadline=None)
    @given(dx=st.integers(-6, 6), dy=st.integers(-6, 6))
    def test_translation_equivariance(self, dx, dy):
        from iccs.fep.devices import Camera

        base = Camera("c", {"width": 48, "height": 48, "base_cx": 23.5,
                            "base_cy": 22.25, "spot_sigma": 2.0,
                            "amplitude": 9000.0, "noise_level": 0.0}, seed=0)
        moved = Camera("c", {"width": 48, "height": 48, "base_cx": 23.5 + dx,
                             "base_cy": 22.25 + dy, "spot_sigma": 2.0,
                             "amplitude": 9000.0, "noise_level": 0.0}, seed=0)
        cx0, cy0 = compute_centroid(base.frame())
        cx1, cy1 = compute_centroid(moved.frame())
        assert cx1 - cx0 == pytest.approx(dx, abs=1e-6)
        assert cy1 - cy0 == pytest.approx(dy, abs=1e-6)


def alignment_rig(offset_px=(5.0, -3.0), gain_error=0.0, tol=0.1,
                  noise=0.0, reservations=None, max_iterations=10):
    clock = VirtualClock()
    bus = Bus(clock)
    points = [
        PointSpec("b01/mx", "stepper_motor",
                  {"rate": 200, "min": -100_000, "max": 100_000}),
        PointSpec("b01/my", "stepper_motor",
                  {"rate": 200, "min": -100_000, "max": 100_000}),
        PointSpec("b01/cam", "camera",
                  {"width": 64, "height": 64,
                   "base_cx": 31.5 + offset_px[0], "base_cy": 31.5 + offset_px[1],
                   "motor_x": "b01/mx", "motor_y": "b01/my",
                   "g11": 0.05, "g22": 0.05, "noise_level": noise}),
    ]
    fep = Fep("b01", bus, clock, points, reservations=reservations)
    fep.start()

    def advance(dt):
        clock.advance(dt)
        fep.advance(dt)

    sup = AlignmentSupervisor(bus, clock, [AlignmentChannel(
        "b01", "b01/cam", "b01/mx", "b01/my", (31.5, 31.5),
        (0.05, 0.0, 0.0, 0.05), tolerance_px=tol,
        max_iterations=max_iterations, motor_rate=200)],
        reservations=reservations, advance_fn=advance)
    sup.start()
    return sup, bus, gain_error


class TestAlignment:
    def test_already_at_target_zero_corrections(self):
        sup, bus, _ = alignment_rig(offset_px=(0.0, 0.0))
        trace = sup.run_alignment("b01")
        assert trace.converged
        assert len(trace.iterations) == 1  # a single measurement, no moves
        assert trace.iterations[0]["moves"] == [0, 0]
        bus.shutdown()

    def test_exact_gain_one_correction(self):
        sup, bus, _ = alignment_rig(offset_px=(5.0, -3.0))
        trace = sup.run_alignment("b01")
        assert trace.converged
        assert len(trace.iterations) == 2
        assert trace.final_error <= 0.1
        bus.shutdown()

    def test_overestimated_gain_contracts_at_tenth(self):
        # G = 1.1 * C: error contracts by 1 - 1/1.1 ~ 0.0909 per pass;
        # 10 px to 0.01 px tolerance inside 4 corrections
        sup, bus, _ = alignment_rig(offset_px=(10.0, 0.0), tol=0.01)
        trace = sup.run_alignment("b01", gain_error=0.10)
        assert trace.converged
        norms = trace.error_norms()
        assert len(norms) <= 5
        for previous, current in zip(norms, norms[1:]):
            assert current <= 0.105 * previous + 0.01

    def test_reservation_missing(self):
        clock_res = ReservationService(VirtualClock())
        sup, bus, _ = alignment_rig(reservations=clock_res)
        clock_res.reserve("b01/mx", "operator-jane")
        with pytest.raises(ReservationMissing):
            sup.run_alignment("b01")
        bus.shutdown()

    def test_nonconvergence_reported_not_raised(self):
        sup, bus, _ = alignment_rig(offset_px=(20.0, 15.0), tol=0.001,
                                    max_iterations=1)
        trace = sup.run_alignment("b01", gain_error=0.5)
        assert trace.converged is False
        assert len(trace.iterations) >= 1
        bus.shutdown()

    @settings(max_examples=15, deadline=None)
    @given(
        ox=st.floats(-12, 12), oy=st.floats(-12, 12),
        rho=st.floats(0.0, 0.5),
    )
    def test_contraction_invariant(self, ox, oy, rho):
        # with overestimated gain (1 + rho), noiseless error norms contract
        # at least geometrically by rho until inside tolerance
        sup, bus, _ = alignment_rig(offset_px=(ox, oy), tol=0.1)
        trace = sup.run_alignment("b01", gain_error=rho)
        norms = trace.error_norms()
        assert trace.converged
        for previous, current in zip(norms, norms[1:]):
            if previous > 0.1:
                assert current <= rho * previous + 0.1
        bus.shutdown()


class TestSetpoints:
    def test_identity_point(self):
        model = SetpointModel(base_gain=2.5, reference_energy_j=100.0)
        bundle = model.setpoints({"b01": 100.0})
        assert bundle["b01"]["amplifier_gain"] == pytest.approx(2.5)

    def test_linearity(self):
        model = SetpointModel(base_gain=2.5, reference_energy_j=100.0)
        bundle = model.setpoints({"b01": 200.0})
        assert bundle["b01"]["amplifier_gain"] == pytest.approx(5.0)

    def test_zero_goal_out_of_envelope(self):
        model = SetpointModel(envelope_j=(1.0, 500.0))
        with pytest.raises(GoalOutOfEnvelope):
            model.setpoints({"b01": 0.0})


class TestCharging:
    def test_ramp_to_charged_in_two_seconds(self):
        module = ChargeModule("pcs_b01", charge_rate_vps=10_000.0)
        module.start_charge(20_000.0)
        for _ in range(20):
            module.advance(0.1)
        assert module.state == "charged"
        assert module.voltage_v == pytest.approx(20_000.0)
        states = [s for s, _ in module.trace]
        assert states == ["idle", "charging", "charged"]

    def test_voltage_never_exceeds_target(self):
        module = ChargeModule("m", charge_rate_vps=50_000.0)
        module.start_charge(10_000.0)
        for _ in range(100):
            module.advance(0.17)
            assert module.voltage_v <= 10_000.0 * 1.02

    def test_abort_mid_charge_dumps_never_fires(self):
        module = ChargeModule("m", charge_rate_vps=10_000.0)
        module.start_charge(20_000.0)
        module.advance(1.0)  # 50%
        module.dump()
        assert module.state == "dumped"
        module.fire()  # must be a no-op
        for _ in range(30):
            module.advance(0.1)
        assert module.voltage_v == 0.0
        assert "fired" not in [s for s, _ in module.trace]

    def test_trace_is_legal_path(self):
        module = ChargeModule("m")
        module.start_charge(5_000.0)
        for _ in range(10):
            module.advance(0.1)
        module.fire()
        module.recycle()
        states = [s for s, _ in module.trace]
        for a, b in zip(states, states[1:]):
            assert (a, b) in LEGAL_TRANSITIONS

    def test_permissive_denied_keeps_idle(self):
        clock = VirtualClock()
        bus = Bus(clock)
        sup = PowerSupervisor(bus, clock, ["pcs_b01"],
                              permissive_check=lambda a: (False, ["door=True"]))
        sup.start()
        with pytest.raises(PermissiveDenied):
            sup.charge_sequence("pcs_b01", 20_000.0)
        assert sup.states()["pcs_b01"] == "idle"
        bus.shutdown()

    def test_double_charge_rejected(self):
        clock = VirtualClock()
        bus = Bus(clock)
        sup = PowerSupervisor(bus, clock, ["m1"])
        sup.start()
        sup.charge_sequence("m1", 10_000.0)
        with pytest.raises(AlreadyActive):
            sup.charge_sequence("m1", 10_000.0)
        bus.shutdown()


class TestDiagnostics:
    def rig(self):
        clock = VirtualClock()
        bus = Bus(clock)
        events = EventLog(clock)
        archive = ArchiveService(clock)
        alerts = AlertService(clock, events, publish=bus.publish)
        feps = {}
        for fep_id, points in (
                ("b01", ["b01/digi0", "b01/digi1"]),
                ("b02", ["b02/cal0"])):
            specs = [PointSpec(p, "transient_digitizer", {"record_length": 32})
                     if "digi" in p else PointSpec(p, "calorimeter", {})
                     for p in points]
            fep = Fep(fep_id, bus, clock, specs, events=events)
            fep.start()
            feps[fep_id] = fep
        sup = DiagnosticsSupervisor(
            bus, clock,
            {"b01": ["b01/digi0", "b01/digi1"], "b02": ["b02/cal0"]},
            archive=archive, alerts=alerts, events=events)
        sup.start()
        return sup, bus, feps, archive, alerts

    def test_collect_bundle_archived(self):
        sup, bus, feps, archive, _ = self.rig()
        sup.handle_action("arm", "shot-1", {})
        for fep in feps.values():
            fep.trigger_shot("shot-1")
        bundle = sup.collect("shot-1")
        assert len(bundle["records"]) == 3
        stored = json.loads(archive.fetch_one("shot-1", "sup/laser_diag"))
        assert [r["point_id"] for r in stored["records"]] == [
            "b01/digi0", "b01/digi1", "b02/cal0"]
        bus.shutdown()

    def test_partial_collection_lists_missing(self):
        sup, bus, feps, archive, _ = self.rig()
        sup.handle_action("arm", "shot-1", {})
        for fep in feps.values():
            fep.trigger_shot("shot-1")
        feps["b02"].stop()
        with pytest.raises(PartialCollection) as err:
            sup.collect("shot-1")
        assert err.value.missing == ["b02/cal0"]
        stored = json.loads(archive.fetch_one("shot-1", "sup/laser_diag"))
        assert stored["missing"] == ["b02/cal0"]
        assert len(stored["records"]) == 2
        bus.shutdown()

    def test_empty_arming_raises_warning_alert(self):
        sup, bus, feps, archive, alerts = self.rig()
        sup._armed["shot-9"] = []
        for fep in feps.values():
            fep.trigger_shot("shot-9")
        bundle = sup.collect("shot-9")
        assert bundle["records"] == []
        active = alerts.active()
        assert any(a.severity == "warning" for a in active)
        bus.shutdown()


class TestReservationAudit:
    def test_supervisor_reserves_before_commanding(self):
        clock = VirtualClock()
        bus = Bus(clock)
        events = EventLog(clock)
        reservations = ReservationService(clock, events)
        fep = Fep("b01", bus, clock,
                  [PointSpec("b01/sh0", "shutter", {})],
                  events=events, reservations=reservations)
        fep.start()
        from iccs.supervisors.rollup import StatusSupervisor

        sup = StatusSupervisor("shot_services", bus, clock,
                               shutters=["b01/sh0"], events=events,
                               reservations=reservations)
        sup.start()
        sup.handle_action("setup", "shot-1", {})
        # audit: the reserve event precedes the command event
        records = events.records()
        reserve_seq = [r.seq for r in records
                       if r.category == "operator_action"
                       and '"op":"reserve"' in r.payload
                       and '"resource":"b01/sh0"' in r.payload]
        command_seq = [r.seq for r in records
                       if r.source == "pt/b01/sh0"
                       and '"op":"open"' in r.payload]
        assert reserve_seq and command_seq
        assert min(reserve_seq) < min(command_seq)
        bus.shutdown()
