"""Harness: config loading/scaling, launch, scripts, metrics, replay."""

from __future__ import annotations

import json

import pytest

from conftest import mini_plan
from iccs.harness.config import (
    ParseError,
    ValidationError,
    generate_profile,
    load_config,
    mini_profile,
    parse_config,
    render_config,
    resolve_data_path,
    scaled_counts,
)
from iccs.harness.facility import StartupTimeout, launch
from iccs.harness.metrics import NoData
from iccs.harness.script import ScriptParseError, ScriptRunner, parse_script


class TestConfig:
    def test_default_profile_scaled_counts(self):
        config = load_config(resolve_data_path("@8beam"))
        assert config.beams == 8
        # 45,000 x 8/192 and 14,000 x 8/192, rounded half up
        assert config.point_count() == 1875
        assert config.plc.point_count() == 583
        assert len(config.feps) == 13
        assert config.camera_count() == 21
        assert "8/192" in config.scale_note

    def test_generator_matches_packaged_profile(self):
        generated = render_config(generate_profile(8))
        packaged = resolve_data_path("@8beam").read_text(encoding="utf-8")
        assert generated == packaged

    def test_scaled_counts_rule(self):
        counts = scaled_counts(8)
        assert counts == {"control_points": 1875, "plc_points": 583,
                          "feps": 13, "cameras": 21}

    def test_duplicate_point_id_named(self):
        text = ("fep a\npoint x/y/z photodiode\npoint x/y/z photodiode\n"
                "plc_input door\nplc_chain act door=1\n")
        with pytest.raises(ValidationError, match="x/y/z"):
            parse_config(text)

    def test_parse_error_carries_line(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_config("beams 4\nbeams four\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ParseError, match="warp"):
            parse_config("warp 9\n")

    def test_load_config_pure(self):
        path = resolve_data_path("@mini")
        a = load_config(path)
        b = load_config(path)
        assert render_config(a) == render_config(b)

    def test_render_parse_round_trip(self):
        config = mini_profile()
        text = render_config(config)
        back = parse_config(text, name=config.name)
        assert render_config(back) == text


class TestLaunch:
    def test_mini_ready_within_budget(self, mini_facility):
        assert mini_facility.restart_elapsed_s < 10.0
        assert mini_facility.director.status_rollup()["ready"]

    def test_kill_and_relaunch_increments_incarnation(self, mini_facility):
        first = mini_facility.bus.resolve_name("fep/b01")
        mini_facility.kill_fep("b01")
        mini_facility.relaunch_fep("b01")
        second = mini_facility.bus.resolve_name("fep/b01")
        assert second.incarnation > first.incarnation
        assert mini_facility.director.status_rollup()["ready"]

    def test_tcp_port_conflict(self):
        from iccs.bus.tcp import PortUnavailable

        first = launch(mini_profile(), mode="virtual", tcp_port=0)
        try:
            with pytest.raises(PortUnavailable):
                launch(mini_profile(), mode="virtual",
                       tcp_port=first.tcp_server.port)
        finally:
            first.shutdown()

    def test_shutdown_leaves_no_registrations(self):
        facility = launch(mini_profile(), mode="virtual")
        facility.shutdown()
        assert facility.bus.live_names() == {}


class TestScripts:
    def test_single_shot_script(self, mini_facility):
        runner = ScriptRunner(mini_facility)
        report = runner.run_path("@mini_shot")
        assert report.all_ok, report.render()

    def test_abort_script(self, mini_facility):
        runner = ScriptRunner(mini_facility)
        report = runner.run_text(
            "policy stop\nplan @mini\nabort_at 1.8\ncountdown\n"
            "expect outcome aborted\nexpect phase aborted\n")
        assert report.all_ok, report.render()

    def test_hold_script_extends_run(self, mini_facility):
        start = mini_facility.clock.now_ns()
        runner = ScriptRunner(mini_facility)
        report = runner.run_text(
            "policy stop\nplan @mini\nhold_at 4.0 2.0\ncountdown\n"
            "expect outcome completed\n")
        assert report.all_ok, report.render()
        elapsed = (mini_facility.clock.now_ns() - start) / 1e9
        assert elapsed == pytest.approx(7.0, abs=1e-9)

    def test_malformed_script_line(self):
        with pytest.raises(ScriptParseError, match="line 2"):
            parse_script("policy stop\nwarp 9\n")

    def test_step_failure_policy_continue(self, mini_facility):
        runner = ScriptRunner(mini_facility)
        report = runner.run_text(
            "policy continue\nexpect phase fired\nexpect phase idle\n")
        assert not report.steps[1].ok
        assert report.steps[2].ok  # continued past the failure

    def test_fault_injection_flips_rollup(self, mini_facility):
        runner = ScriptRunner(mini_facility)
        report = runner.run_text(
            "fault b01/diag/pd000 smoke\nexpect rollup_ready false\n"
            "clear_fault b01/diag/pd000\nexpect rollup_ready true\n")
        assert report.all_ok, report.render()


class TestMetrics:
    def test_no_data_before_any_run(self, mini_facility):
        with pytest.raises(NoData):
            mini_facility.metrics.report()

    def test_alert_latency_collected(self, mini_facility):
        mini_facility.services.alerts.raise_alert("t", "serious", "x")
        report = mini_facility.metrics.report()
        check = report.by_name()["alert_delivery"]
        assert check.count == 1
        assert check.passed

    def test_report_renders(self, mini_facility):
        mini_facility.services.alerts.raise_alert("t", "serious", "x")
        mini_facility.metrics.scalar("recovery_s", 0.5)
        text = mini_facility.metrics.report().render()
        assert "alert_delivery" in text
        assert "recovery_s" in text


class TestReplayDeterminism:
    def scripted_run(self, tmp_path, tag):
        run_dir = tmp_path / tag
        facility = launch(mini_profile(seed=1234), mode="virtual",
                          run_dir=run_dir)
        try:
            runner = ScriptRunner(facility)
            report = runner.run_text(
                "policy stop\nmisalign b01 4.0 -2.5\nalign b01\n"
                "plan @mini\nhold_at 4.0 1.0\ncountdown\n"
                "expect outcome completed\n")
            assert report.all_ok, report.render()
            archive = {
                source: facility.services.archive.fetch_one("shot-0001", source)
                for source in facility.services.archive.sources("shot-0001")}
        finally:
            facility.shutdown()
        return (run_dir / "events.log").read_bytes(), archive

    def test_same_seed_bit_identical(self, tmp_path):
        log_a, archive_a = self.scripted_run(tmp_path, "a")
        log_b, archive_b = self.scripted_run(tmp_path, "b")
        assert log_a == log_b
        assert archive_a == archive_b
