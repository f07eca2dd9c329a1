"""Acceptance suite: every scaled budget and property gate, one test per
criterion, each reporting a pass/fail line into the terminal summary.

Wall-clock criteria (1-4) share one 8-beam facility in wall mode; the
countdown, alert storm, fault storm, command storm, and video consumption
all run against it. Property criteria (5, 8-12) use purpose-built rigs.
"""

from __future__ import annotations

import http.client
import itertools
import json
import random
import threading
import time

import pytest

from conftest import mini_plan, record_acceptance, tick_events
from iccs import timing
from iccs.clock import VirtualClock, WallClock
from iccs.harness.config import load_config, mini_profile, resolve_data_path
from iccs.harness.facility import launch
from iccs.harness.gateway import Gateway
from iccs.harness.script import ScriptRunner
from iccs.plc import ChainTerm, InterlockInput, PermissiveChain, PlcSegment
from iccs.services.reservations import AlreadyReserved, ReservationService


@pytest.fixture(scope="module")
def wall_rig():
    """8-beam profile in wall-clock mode with the gateway up."""
    config = load_config(resolve_data_path("@8beam"))
    facility = launch(config, mode="wall")
    gateway = Gateway(facility, port=0)
    yield facility, gateway
    gateway.close()
    facility.shutdown()


def _percentile(samples, p):
    ordered = sorted(samples)
    return ordered[min(len(ordered) - 1, round(p / 100 * (len(ordered) - 1)))]


def test_criterion_01_alert_latency(wall_rig):
    """500 alerts during a countdown; p99 raise-to-delivery < 1 s."""
    facility, _ = wall_rig
    facility.director.reset()
    plan_text = resolve_data_path("@quick", kinds=(".plan",)).read_text()
    from iccs.director import parse_plan

    facility.director.load_plan(parse_plan(plan_text))
    countdown = threading.Thread(target=facility.director.run_countdown,
                                 daemon=True)
    base = facility.metrics.histograms["alert_delivery"].count
    countdown.start()
    deadline = time.monotonic() + 10.0
    while facility.director.phase not in ("counting", "held") \
            and time.monotonic() < deadline:
        time.sleep(0.005)
    for i in range(500):
        facility.services.alerts.raise_alert(
            "acceptance", "warning", f"storm {i}")
        time.sleep(0.002)
    countdown.join(timeout=60.0)
    assert not countdown.is_alive()
    hist = facility.metrics.histograms["alert_delivery"]
    samples = hist.snapshot()[base:]
    assert len(samples) >= 500
    p99_s = _percentile(samples, 99) / 1000.0
    passed = p99_s < 1.0
    record_acceptance(
        "1 alert latency", passed,
        f"p99 {p99_s * 1000:.2f} ms over {len(samples)} alerts, budget 1 s")
    assert passed
    assert facility.director.last_result.outcome == "completed"


def test_criterion_02_broad_view_status(wall_rig):
    """100 device faults; p99 fault-to-rollup-visibility < 10 s."""
    facility, _ = wall_rig
    points = [p for p in facility.config.all_points() if "/diag/" in p]
    chosen = points[:: max(1, len(points) // 100)][:100]
    assert len(chosen) == 100
    latencies_ms = []
    for point in chosen:
        owner = facility.config.point_owner()[point]
        t0 = time.monotonic()
        facility.inject_fault(point, "acceptance fault")
        deadline = time.monotonic() + 10.0
        seen = False
        while time.monotonic() < deadline:
            rollup = facility.director.status_rollup()
            if not rollup["ready"]:
                latencies_ms.append((time.monotonic() - t0) * 1000.0)
                seen = True
                break
            time.sleep(0.0005)
        assert seen, f"fault on {point} never reached the rollup"
        facility.clear_fault(point)
        deadline = time.monotonic() + 10.0
        while not facility.director.status_rollup()["ready"] \
                and time.monotonic() < deadline:
            time.sleep(0.0005)
    p99_s = _percentile(latencies_ms, 99) / 1000.0
    passed = p99_s < 10.0
    record_acceptance(
        "2 broad-view status", passed,
        f"p99 {p99_s * 1000:.2f} ms over {len(latencies_ms)} faults, budget 10 s")
    assert passed


def test_criterion_03_command_round_trip(wall_rig):
    """1,000 motor jogs through the gateway; p99 in-to-ack < 100 ms."""
    facility, gateway = wall_rig
    conn = http.client.HTTPConnection("127.0.0.1", gateway.port, timeout=5.0)

    def post(path, body):
        data = json.dumps(body).encode()
        conn.request("POST", path, body=data,
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        return resp.status, json.loads(resp.read().decode())

    status, body = post("/reserve", {"resource": "b01/align/mx",
                                     "holder": "op-acceptance"})
    assert status == 200, body
    base = facility.metrics.histograms["command_rtt"].count
    for i in range(1000):
        status, body = post("/command", {
            "point_id": "b01/align/mx", "op": "move_relative",
            "args": {"steps": 1 if i % 2 == 0 else -1},
            "operator": "op-acceptance"})
        assert status == 200 and body["ok"], body
    conn.close()
    samples = facility.metrics.histograms["command_rtt"].snapshot()[base:]
    assert len(samples) >= 1000
    p99_s = _percentile(samples, 99) / 1000.0
    passed = p99_s < 0.1
    record_acceptance(
        "3 command round-trip", passed,
        f"p99 {p99_s * 1000:.2f} ms over {len(samples)} commands, budget 100 ms")
    assert passed


def test_criterion_04_video_rate(wall_rig):
    """One camera stream for 10 s: 100 +- 20 frames, median interval
    100 ms +- 20%."""
    facility, _ = wall_rig
    handle = facility.bus.open_stream("video/b01/align/cam")
    frames = []
    stop_at = time.monotonic() + 10.0
    last_arrival = None
    intervals_ms = []
    while time.monotonic() < stop_at:
        try:
            seq, _payload = handle.get(timeout=0.5)
        except Exception:
            continue
        now = time.monotonic()
        if last_arrival is not None:
            intervals_ms.append((now - last_arrival) * 1000.0)
        last_arrival = now
        frames.append(seq)
    handle.close()
    count_ok = 80 <= len(frames) <= 120
    median_ms = _percentile(intervals_ms, 50)
    median_ok = abs(median_ms - 100.0) <= 20.0
    seq_ok = frames == sorted(frames) and len(set(frames)) == len(frames)
    passed = count_ok and median_ok and seq_ok
    record_acceptance(
        "4 video rate", passed,
        f"{len(frames)} frames in 10 s, median interval {median_ms:.1f} ms")
    assert passed, (len(frames), median_ms)


def test_criterion_05_timing_accuracy():
    """1600-entry schedule under bounded-uniform jitter: max |err| <= 30 ps;
    offsets outside the 2-second window rejected."""
    requests = [timing.TriggerRequest(f"ch{i:04d}", -600_000_000 + i * 500_000, 100)
                for i in range(1600)]
    schedule = timing.build_schedule("acceptance", requests)
    fired = timing.execute(schedule, timing.BoundedUniformJitter(30), seed=2024)
    max_err = max(abs(r.error_ps) for r in fired)
    report = timing.accuracy_report(fired)
    in_window_ok = max_err <= 30 and len(fired) == 1600
    assert isinstance(max_err, int)
    try:
        timing.build_schedule("reject", [
            timing.TriggerRequest("late", 2_500_000_000_000, 10)])
        rejected = False
    except timing.OutOfWindow:
        rejected = True
    passed = in_window_ok and rejected and report["max_error_ps"] == max_err
    record_acceptance(
        "5 timing accuracy", passed,
        f"1600 channels, max |error| {max_err} ps (integer), "
        f"rms {report['rms_error_ps']:.2f} ps; out-of-window rejected")
    assert passed


def test_criterion_06_post_shot_recovery(tmp_path):
    """Scripted 8-beam shot: recovery < 30 s, completeness 100%, CRCs verify."""
    config = load_config(resolve_data_path("@8beam"))
    facility = launch(config, mode="virtual", run_dir=tmp_path / "run")
    try:
        report = ScriptRunner(facility).run_path("@single_shot")
        assert report.all_ok, report.render()
        result = facility.director.last_result
        recovery = result.recovery
        complete = recovery["complete"] and recovery["recovered"] == recovery["expected"]
        records = facility.services.archive.fetch(result.shot_id)
        crc_ok = all(r.crc_ok for r in records) and len(records) >= recovery["recovered"]
        elapsed_ok = recovery["elapsed_s"] < 30.0
        passed = complete and crc_ok and elapsed_ok
        record_acceptance(
            "6 post-shot recovery", passed,
            f"{recovery['recovered']}/{recovery['expected']} sources in "
            f"{recovery['elapsed_s']:.3f} s, {len(records)} archive records, "
            f"all checksums verified, budget 30 s")
        assert passed
    finally:
        facility.shutdown()


def test_criterion_07_restart():
    """8-beam launch to ready rollup < 10 s, single process."""
    t0 = time.monotonic()
    facility = launch(load_config(resolve_data_path("@8beam")), mode="virtual")
    try:
        elapsed = time.monotonic() - t0
        ready = facility.director.status_rollup()["ready"]
        passed = elapsed < 10.0 and ready
        record_acceptance(
            "7 restart", passed,
            f"launch to ready in {elapsed:.3f} s, budget 10 s")
        assert passed
    finally:
        facility.shutdown()


def test_criterion_08_alignment():
    """100 random offsets, gain error <= 0.3: converge to 0.1 px within 10
    iterations, noiseless error norms strictly decreasing."""
    from test_supervisors import alignment_rig

    rng = random.Random(42)
    worst_iters = 0
    for trial in range(100):
        ox = rng.uniform(-12.0, 12.0)
        oy = rng.uniform(-12.0, 12.0)
        rho = rng.uniform(0.0, 0.3)
        sup, bus, _ = alignment_rig(offset_px=(ox, oy), tol=0.1)
        try:
            trace = sup.run_alignment("b01", gain_error=rho)
            assert trace.converged, (trial, ox, oy, rho)
            corrections = len(trace.iterations) - 1
            assert corrections <= 10, (trial, corrections)
            worst_iters = max(worst_iters, corrections)
            norms = trace.error_norms()
            for previous, current in zip(norms, norms[1:]):
                assert current < previous, (trial, norms)
        finally:
            bus.shutdown()
    record_acceptance(
        "8 alignment", True,
        f"100 random offsets converged to 0.1 px, worst case "
        f"{worst_iters} corrections (budget 10), monotone error norms")


def test_criterion_09_reservation_exclusion():
    """16 clients x 8 resources x 1,000 ops: zero overlapping reservations."""
    service = ReservationService(WallClock())
    resources = [f"res/{i}" for i in range(8)]
    attempts = [0] * 16

    def client(client_id):
        rng = random.Random(client_id)
        holder = f"client-{client_id}"
        held = set()
        for _ in range(1000):
            attempts[client_id] += 1
            resource = rng.choice(resources)
            if resource in held and rng.random() < 0.6:
                try:
                    service.release(resource, holder)
                except Exception:
                    pass
                held.discard(resource)
            else:
                lease = rng.choice([None, None, 0.002, 0.01])
                try:
                    service.reserve(resource, holder, lease)
                    if lease is None:
                        held.add(resource)
                except AlreadyReserved:
                    pass
        for resource in held:
            try:
                service.release(resource, holder)
            except Exception:
                pass

    threads = [threading.Thread(target=client, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    # audit the operation log: no two live reservations may overlap
    violations = 0
    per_resource: dict[str, list] = {}
    for op, resource, holder, t_ns, lease_ns in service.audit_log:
        per_resource.setdefault(resource, []).append((t_ns, op, holder, lease_ns))
    checked = 0
    for resource, entries in per_resource.items():
        entries.sort(key=lambda e: e[0])
        live: tuple | None = None  # (holder, acquired_ns, lease_ns)
        for t_ns, op, holder, lease_ns in entries:
            checked += 1
            if op == "reserve":
                if live is not None and live[0] != holder:
                    expired = (live[2] is not None
                               and t_ns >= live[1] + live[2])
                    if not expired:
                        violations += 1
                live = (holder, t_ns, lease_ns)
            elif op == "release" and live is not None and live[0] == holder:
                live = None
    passed = violations == 0 and sum(attempts) == 16_000 and checked > 0
    record_acceptance(
        "9 reservation exclusion", passed,
        f"{sum(attempts)} randomized ops, {checked} logged grants/releases "
        f"audited, {violations} overlaps")
    assert passed


def test_criterion_10_interlock_oracle():
    """Chains up to 12 literals match the brute-force conjunction oracle
    exhaustively; the latch property holds over 10,000 random scans."""
    rng = random.Random(7)
    evaluated = 0
    for n_literals in range(1, 13):
        names = [f"i{k}" for k in range(n_literals)]
        terms = tuple(ChainTerm(nm, rng.choice([True, False])) for nm in names)
        segment = PlcSegment(None, VirtualClock(),
                             [InterlockInput(nm) for nm in names],
                             [PermissiveChain("act", terms)])
        for vector in itertools.product([False, True], repeat=n_literals):
            values = dict(zip(names, vector))
            decision = segment.evaluate_permissive("act", inputs=values)
            oracle = all(values[t.input_id] == t.required for t in terms)
            assert decision.allow == oracle, (n_literals, values)
            evaluated += 1

    scans = 0
    latch_ok = True
    while scans < 10_000:
        segment = PlcSegment(None, VirtualClock(),
                             [InterlockInput("door"), InterlockInput("hatch")],
                             [PermissiveChain("open",
                                              (ChainTerm("door", True),
                                               ChainTerm("hatch", True)))])
        tripped = False
        for _ in range(rng.randint(20, 60)):
            fields = {"door": rng.random() < 0.8, "hatch": rng.random() < 0.8}
            out = segment.scan_cycle(fields)
            scans += 1
            if not (fields["door"] and fields["hatch"]):
                tripped = True
            if tripped and out["open"].allow:
                latch_ok = False
        if rng.random() < 0.5:
            segment.scan_cycle({"door": True, "hatch": True})
            scans += 1
            cleared = segment.reset_trips("audit")
            if cleared != sorted(segment.tripped() + cleared):
                pass  # reset returning subset is fine; latch check is above
    passed = latch_ok
    record_acceptance(
        "10 interlock oracle", passed,
        f"{evaluated} exhaustive vectors equal the oracle; latch held over "
        f"{scans} random scans")
    assert passed


def test_criterion_11_countdown_properties():
    """200 randomized countdown scripts: fire-once, monotone clock,
    mark-barrier, abort safety, zero ticks after abort."""
    from iccs.director import CountdownMark

    rng = random.Random(1312)
    outcomes = {"completed": 0, "aborted": 0}
    for trial in range(200):
        facility = launch(mini_profile(seed=trial), mode="virtual")
        try:
            marks = [CountdownMark(3000, "setup"), CountdownMark(2000, "arm"),
                     CountdownMark(1500, "charge"),
                     CountdownMark(500, "final_check"), CountdownMark(0, "fire")]
            plan = mini_plan(shot_id=f"shot-{trial:04d}", marks=marks)
            script_lines = ["policy stop"]
            if rng.random() < 0.5:
                at = rng.uniform(0.3, 2.8)
                script_lines.append(f"hold_at {at:.2f} {rng.uniform(0.1, 0.8):.2f}")
            if rng.random() < 0.5:
                script_lines.append(f"abort_at {rng.uniform(0.1, 2.9):.2f}")
            facility.director.load_plan(plan)
            runner = ScriptRunner(facility)
            report = runner.run_text("\n".join(script_lines) + "\ncountdown\n")
            assert report.steps[-1].ok, report.render()
            result = facility.director.last_result
            outcomes[result.outcome] += 1

            records = facility.services.events.records()
            t0_count = sum(1 for r in records if '"op":"t0"' in r.payload)
            if result.outcome == "completed":
                assert t0_count == 1, trial
            else:
                assert t0_count == 0, trial
                abort_seq = min(r.seq for r in records
                                if '"op":"abort"' in r.payload)
                tick_seqs = [r.seq for r in records if '"op":"tick"' in r.payload]
                assert all(s < abort_seq for s in tick_seqs), trial
                states = facility.supervisors["power"].states()
                assert all(s not in ("charging", "charged")
                           for s in states.values()), (trial, states)
                for fep in facility.feps.values():
                    assert fep.armed_points(plan.shot_id) == [], trial

            ticks = tick_events(facility.services.events)
            values = [t for t, _ in ticks]
            assert all(a >= b for a, b in zip(values, values[1:])), trial
            held = [t for t, phase in ticks if phase == "held"]
            assert len(set(held)) <= 1, trial
            counting = [t for t, phase in ticks if phase == "counting"]
            assert all(a > b for a, b in zip(counting, counting[1:])), trial

            # mark barrier: every ack precedes any tick below its mark
            dispatched: dict[str, tuple[int, int]] = {}
            acks: dict[str, int] = {}
            for r in records:
                body = json.loads(r.payload)
                if body.get("op") == "mark_dispatch":
                    dispatched[body["action"]] = (body["t_minus_ms"], r.seq)
                elif body.get("op") == "mark_ack":
                    acks[body["action"]] = max(acks.get(body["action"], 0), r.seq)
                elif body.get("op") == "tick":
                    for action, (mark_t, _seq) in dispatched.items():
                        if body["t_minus_ms"] < mark_t:
                            assert acks.get(action, 0) < r.seq, (trial, action)
        finally:
            facility.shutdown()
    record_acceptance(
        "11 countdown properties", True,
        f"200 randomized runs ({outcomes['completed']} completed, "
        f"{outcomes['aborted']} aborted): fire-once, monotone clock, "
        f"mark-barrier, abort-safety all held")


def test_criterion_12_determinism(tmp_path):
    """Identical seed replays produce byte-identical logs and payloads."""
    script = ("policy stop\nmisalign b01 4.0 -2.5\nalign b01\n"
              "plan @mini\nhold_at 4.0 1.0\ncountdown\n"
              "expect outcome completed\ncollect laser_diag\n")

    def run(tag):
        run_dir = tmp_path / tag
        facility = launch(mini_profile(seed=99), mode="virtual",
                          run_dir=run_dir)
        try:
            report = ScriptRunner(facility).run_text(script)
            assert report.all_ok, report.render()
            payloads = {
                source: facility.services.archive.fetch_one("shot-0001", source)
                for source in facility.services.archive.sources("shot-0001")}
        finally:
            facility.shutdown()
        return (run_dir / "events.log").read_bytes(), payloads

    log_a, payloads_a = run("a")
    log_b, payloads_b = run("b")
    identical = log_a == log_b and payloads_a == payloads_b
    record_acceptance(
        "12 determinism", identical,
        f"event log ({len(log_a)} bytes) and {len(payloads_a)} archive "
        f"payloads bit-identical across replays")
    assert identical
