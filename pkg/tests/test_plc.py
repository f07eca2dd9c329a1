"""Interlock segment: permissive logic vs brute-force oracle, latching,
slow-channel dynamics vs closed form."""

from __future__ import annotations

import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iccs.clock import VirtualClock
from iccs.plc import (
    ChainTerm,
    InterlockInput,
    PermissiveChain,
    PlcSegment,
    SetpointOutOfBounds,
    SlowChannel,
    UnknownAction,
    UnknownInput,
)


def segment(inputs, chains, channels=None, scan_period_s=0.1):
    return PlcSegment(None, VirtualClock(), inputs, chains, channels,
                      scan_period_s=scan_period_s)


def brute_force_conjunction(terms, values):
    """Independent oracle: plain boolean conjunction over literals."""
    return all(values[t.input_id] == t.required for t in terms)


class TestPermissive:
    def test_all_satisfied_allows(self):
        seg = segment(
            [InterlockInput("door", True), InterlockInput("hatch", True)],
            [PermissiveChain("shutter/b01/open",
                             (ChainTerm("door", True), ChainTerm("hatch", True)))])
        decision = seg.evaluate_permissive("shutter/b01/open")
        assert decision.allow and decision.failing == ()

    def test_single_failure_listed(self):
        seg = segment(
            [InterlockInput("door", False), InterlockInput("hatch", True)],
            [PermissiveChain("a/open",
                             (ChainTerm("door", True), ChainTerm("hatch", True)))])
        decision = seg.evaluate_permissive("a/open")
        assert not decision.allow
        assert decision.failing == ("door=True",)

    def test_all_failures_listed_not_just_first(self):
        seg = segment(
            [InterlockInput("a", False), InterlockInput("b", False),
             InterlockInput("c", True)],
            [PermissiveChain("x", (ChainTerm("a", True), ChainTerm("b", True),
                                   ChainTerm("c", False)))])
        decision = seg.evaluate_permissive("x")
        assert set(decision.failing) == {"a=True", "b=True", "c=False"}

    def test_unknown_action(self):
        seg = segment([InterlockInput("a")], [PermissiveChain("x", (ChainTerm("a", True),))])
        with pytest.raises(UnknownAction):
            seg.evaluate_permissive("nope")

    def test_chain_referencing_unknown_input_rejected(self):
        with pytest.raises(UnknownInput):
            segment([InterlockInput("a")],
                    [PermissiveChain("x", (ChainTerm("ghost", True),))])

    def test_exhaustive_8_literal_oracle(self):
        # all 256 input vectors against the brute-force conjunction oracle
        names = [f"in{i}" for i in range(8)]
        rng = random.Random(5)
        terms = tuple(ChainTerm(n, rng.choice([True, False])) for n in names)
        seg = segment([InterlockInput(n) for n in names],
                      [PermissiveChain("act", terms)])
        for vector in itertools.product([False, True], repeat=8):
            values = dict(zip(names, vector))
            decision = seg.evaluate_permissive("act", inputs=values)
            assert decision.allow == brute_force_conjunction(terms, values)

    @settings(max_examples=80, deadline=None)
    @given(st.data())
    def test_safety_monotonicity(self, data):
        # From allow, flipping any single required input to its unsafe
        # polarity must deny; no single unsafe flip may produce allow.
        n = data.draw(st.integers(1, 6))
        names = [f"i{k}" for k in range(n)]
        required = [data.draw(st.booleans()) for _ in names]
        terms = tuple(ChainTerm(nm, rq) for nm, rq in zip(names, required))
        seg = segment([InterlockInput(nm) for nm in names],
                      [PermissiveChain("act", terms)])
        satisfied = dict(zip(names, required))
        assert seg.evaluate_permissive("act", inputs=satisfied).allow
        for flip in names:
            vector = dict(satisfied)
            vector[flip] = not vector[flip]
            assert not seg.evaluate_permissive("act", inputs=vector).allow


class TestLatching:
    def make(self):
        return segment(
            [InterlockInput("door", True, safe_value=True)],
            [PermissiveChain("shutter/open", (ChainTerm("door", True),))])

    def test_trip_latches_past_recovery(self):
        seg = self.make()
        assert seg.scan_cycle({"door": True})["shutter/open"].allow
        assert not seg.scan_cycle({"door": False})["shutter/open"].allow
        # door closes again, but the trip holds the action denied
        out = seg.scan_cycle({"door": True})
        assert not out["shutter/open"].allow
        assert seg.tripped() == ["door"]

    def test_reset_with_safe_field_restores(self):
        seg = self.make()
        seg.scan_cycle({"door": False})
        seg.scan_cycle({"door": True})
        assert seg.reset_trips("op1") == ["door"]
        assert seg.scan_cycle()["shutter/open"].allow

    def test_reset_with_unsafe_field_stays_latched(self):
        seg = self.make()
        seg.scan_cycle({"door": False})
        assert seg.reset_trips("op1") == []
        assert seg.tripped() == ["door"]

    def test_reset_with_no_trips_empty(self):
        seg = self.make()
        assert seg.reset_trips("op1") == []

    def test_scan_idempotent_on_unchanged_inputs(self):
        seg = self.make()
        first = seg.scan_cycle({"door": True})
        second = seg.scan_cycle()
        assert first == second

    def test_latch_property_random_sequences(self):
        # once tripped, no sequence without reset_trips yields allow
        rng = random.Random(2024)
        for _ in range(200):
            seg = self.make()
            tripped = False
            for _ in range(50):
                value = rng.random() < 0.7
                out = seg.scan_cycle({"door": value})
                if not value:
                    tripped = True
                if tripped:
                    assert not out["shutter/open"].allow


class TestSlowChannels:
    def test_first_order_closed_form(self):
        # v0=1000, sp=0, tau=2 s, advance 2 s -> 1000/e
        ch = SlowChannel("vac", "vacuum_pressure", 1000.0, 1000.0, 2.0,
                         (0.0, 2000.0))
        seg = segment([InterlockInput("x")],
                      [PermissiveChain("a", (ChainTerm("x", True),))], [ch])
        seg.command_slow_control("vac", 0.0)
        seg.advance(2.0)
        expected = 1000.0 * math.exp(-1.0)
        assert ch.value == pytest.approx(expected, rel=1e-6)

    def test_fixed_point(self):
        ch = SlowChannel("argon", "argon_flow", 42.0, 42.0, 3.0, (0.0, 100.0))
        ch.advance(5.0)
        assert ch.value == pytest.approx(42.0, abs=1e-12)

    def test_setpoint_out_of_bounds(self):
        ch = SlowChannel("temp", "air_temp", 20.0, 20.0, 10.0, (0.0, 50.0))
        seg = segment([InterlockInput("x")],
                      [PermissiveChain("a", (ChainTerm("x", True),))], [ch])
        with pytest.raises(SetpointOutOfBounds):
            seg.command_slow_control("temp", 500.0)
        seg.advance(1.0)
        assert ch.value == pytest.approx(20.0)

    @settings(max_examples=80, deadline=None)
    @given(
        v0=st.floats(-1e3, 1e3, allow_nan=False),
        sp=st.floats(-1e3, 1e3, allow_nan=False),
        tau=st.floats(0.05, 50.0, allow_nan=False),
        t=st.floats(0.001, 100.0, allow_nan=False),
    )
    def test_response_matches_closed_form(self, v0, sp, tau, t):
        ch = SlowChannel("c", "air_temp", v0, sp, tau, (-1e4, 1e4))
        ch.advance(t)
        expected = sp + (v0 - sp) * math.exp(-t / tau)
        assert ch.value == pytest.approx(expected, rel=1e-6, abs=1e-9)


class TestScanLoop:
    def test_advance_runs_scans_on_period(self):
        seg = segment([InterlockInput("a")],
                      [PermissiveChain("x", (ChainTerm("a", True),))],
                      scan_period_s=0.1)
        seg.advance(1.05)
        assert seg.scan_count == 10

    def test_staged_field_input_applies_at_scan(self):
        seg = self.segment_with_door()
        seg.set_field_input("door", False)
        assert seg.tripped() == []  # not yet scanned
        seg.advance(0.1)
        assert seg.tripped() == ["door"]

    def segment_with_door(self):
        return segment([InterlockInput("door", True)],
                       [PermissiveChain("open", (ChainTerm("door", True),))])
