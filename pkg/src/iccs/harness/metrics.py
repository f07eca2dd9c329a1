"""Passive latency/throughput metrics checked against the scaled budgets.

The collector subscribes to bus topics and never sits on any measured
path; components stamp a wall-clock origin into their payloads and the
collector records delivery latency on receipt. Round-trip and elapsed
metrics are recorded explicitly by the gateway and harness.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

from iccs.harness.config import Budgets


class NoData(Exception):
    pass


class Histogram:
    """Latency samples in milliseconds with exact percentile readout."""

    def __init__(self, name: str):
        self.name = name
        self._samples: list[float] = []
        self._lock = threading.Lock()

    def record(self, value_ms: float) -> None:
        with self._lock:
            self._samples.append(value_ms)

    @property
    def count(self) -> int:
        with self._lock:
            return len(self._samples)

    def percentile(self, p: float) -> float:
        with self._lock:
            if not self._samples:
                raise NoData(self.name)
            ordered = sorted(self._samples)
        index = min(len(ordered) - 1, max(0, round(p / 100 * (len(ordered) - 1))))
        return ordered[index]

    def median(self) -> float:
        return self.percentile(50)

    def maximum(self) -> float:
        with self._lock:
            if not self._samples:
                raise NoData(self.name)
            return max(self._samples)

    def snapshot(self) -> list[float]:
        with self._lock:
            return list(self._samples)


@dataclass
class BudgetCheck:
    name: str
    count: int
    observed: float
    budget: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"metric {self.name} count={self.count} "
                f"observed={self.observed:.3f} budget={self.budget:.3f} "
                f"{status} {self.detail}".rstrip())


@dataclass
class MetricsReport:
    checks: list[BudgetCheck] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        return "\n".join(c.line() for c in self.checks) + "\n"

    def by_name(self) -> dict[str, BudgetCheck]:
        return {c.name: c for c in self.checks}


class MetricsCollector:
    """Subscribes to alert and readiness topics; accepts explicit samples."""

    def __init__(self, bus, budgets: Budgets):
        self.bus = bus
        self.budgets = budgets
        self.histograms: dict[str, Histogram] = {
            name: Histogram(name)
            for name in ("alert_delivery", "status_propagation",
                         "command_rtt", "video_frame_interval")}
        self.scalars: dict[str, float] = {}
        self._subs = []

    def start(self) -> None:
        self._subs.append(self.bus.subscribe(
            "alert/*", callback=self._on_alert))
        self._subs.append(self.bus.subscribe(
            "readiness/*", callback=self._on_readiness))

    def stop(self) -> None:
        for sub in self._subs:
            self.bus.unsubscribe(sub)
        self._subs.clear()

    def _on_alert(self, env) -> None:
        self._latency_from_payload(env, "wall_ns", "alert_delivery")

    def _on_readiness(self, env) -> None:
        self._latency_from_payload(env, "cause_wall_ns", "status_propagation")

    def _latency_from_payload(self, env, key: str, metric: str) -> None:
        try:
            body = json.loads(env.payload.decode())
        except ValueError:
            return
        origin = body.get(key)
        if origin is None:
            return
        self.histograms[metric].record((time.monotonic_ns() - origin) / 1e6)

    def record(self, metric: str, value_ms: float) -> None:
        self.histograms[metric].record(value_ms)

    def scalar(self, name: str, value: float) -> None:
        self.scalars[name] = value

    def report(self) -> MetricsReport:
        """Pass/fail every budget that has data; NoData when nothing does."""
        checks: list[BudgetCheck] = []
        budget = self.budgets

        def add_hist(metric, budget_s, percentile=99):
            hist = self.histograms[metric]
            if hist.count == 0:
                return
            observed_ms = hist.percentile(percentile)
            checks.append(BudgetCheck(
                metric, hist.count, observed_ms / 1000.0, budget_s,
                observed_ms / 1000.0 < budget_s,
                detail=f"p{percentile}"))

        add_hist("alert_delivery", budget.alert_p99_s)
        add_hist("status_propagation", budget.status_p99_s)
        add_hist("command_rtt", budget.command_p99_s)
        video = self.histograms["video_frame_interval"]
        if video.count:
            median_ms = video.median()
            nominal_ms = 1000.0 / budget.video_fps
            checks.append(BudgetCheck(
                "video_frame_interval", video.count, median_ms / 1000.0,
                nominal_ms / 1000.0,
                abs(median_ms - nominal_ms) <= 0.2 * nominal_ms,
                detail="median vs nominal +-20%"))
        for name, budget_s in (("recovery_s", budget.recovery_s),
                               ("restart_s", budget.restart_s)):
            if name in self.scalars:
                observed = self.scalars[name]
                checks.append(BudgetCheck(name, 1, observed, budget_s,
                                          observed < budget_s, detail="elapsed"))
        if not checks:
            raise NoData("no metrics collected yet")
        return MetricsReport(checks)
