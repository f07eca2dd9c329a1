"""Automatic beam alignment: camera centroid feedback onto two motor axes.

The correction loop measures the spot centroid, converts the pixel error
through the inverse gain matrix into motor steps, moves, and repeats until
the error norm is inside tolerance or the iteration budget runs out. With a
correct gain model one correction lands the spot; with a gain model in
error by a factor (1 + rho) the error contracts by rho/(1 + rho) per pass.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from iccs.fep.devices import decode_frame
from iccs.rpc import call_json, register_errors
from iccs.supervisors.base import Supervisor


class ZeroIntensity(Exception):
    pass


class ReservationMissing(Exception):
    pass


class DeviceFault(Exception):
    pass


register_errors(ZeroIntensity, ReservationMissing, DeviceFault)


def compute_centroid(frame: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted mean position after background subtraction.

    The frame median is subtracted (negatives clamped to zero) to reject
    uniform background; if nothing survives subtraction the raw frame is
    used, so a uniform frame reports its geometric center.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0 or frame.sum() <= 0:
        raise ZeroIntensity("frame has no positive intensity")
    residual = frame - np.median(frame)
    np.clip(residual, 0.0, None, out=residual)
    total = residual.sum()
    if total <= 0:
        residual = frame
        total = frame.sum()
    ys, xs = np.indices(frame.shape)
    cx = float((xs * residual).sum() / total)
    cy = float((ys * residual).sum() / total)
    return cx, cy


@dataclass(frozen=True)
class AlignmentChannel:
    """One beam's alignment hardware and loop parameters."""

    beam_id: str
    camera: str
    motor_x: str
    motor_y: str
    target: tuple[float, float]
    gain: tuple[float, float, float, float]  # pixels per step, row-major 2x2
    tolerance_px: float = 0.1
    max_iterations: int = 10
    motor_rate: float = 200.0

    def __post_init__(self):
        g11, g12, g21, g22 = self.gain
        det = g11 * g22 - g12 * g21
        if abs(det) < 1e-12:
            raise ValueError(f"{self.beam_id}: gain matrix not invertible")
        if self.tolerance_px <= 0:
            raise ValueError(f"{self.beam_id}: tolerance must be > 0")


@dataclass
class AlignmentTrace:
    beam_id: str
    converged: bool = False
    iterations: list[dict] = field(default_factory=list)

    @property
    def final_error(self) -> float:
        return self.iterations[-1]["error_norm"] if self.iterations else math.inf

    def error_norms(self) -> list[float]:
        return [i["error_norm"] for i in self.iterations]


class AlignmentSupervisor(Supervisor):
    """Beam-control supervisor: runs closed-loop alignment per beam."""

    def __init__(self, bus, clock, channels: list[AlignmentChannel], *,
                 events=None, reservations=None, advance_fn=None,
                 watch_patterns=()):
        super().__init__("alignment", bus, clock, events=events,
                         reservations=reservations,
                         watch_patterns=watch_patterns)
        self.channels = {c.beam_id: c for c in channels}
        self.advance_fn = advance_fn or (lambda dt: time.sleep(dt))

    def run_alignment(self, beam_id: str, gain_error: float = 0.0) -> AlignmentTrace:
        """Close the loop on one beam; non-convergence reports in the trace."""
        channel = self.channels[beam_id]
        holder = f"sup/{self.name}"
        try:
            self.reserve_point(channel.motor_x)
            self.reserve_point(channel.motor_y)
        except Exception as exc:
            raise ReservationMissing(str(exc)) from None
        try:
            return self._loop(channel, gain_error, holder)
        finally:
            self.release_point(channel.motor_x)
            self.release_point(channel.motor_y)

    def _loop(self, channel: AlignmentChannel, gain_error: float,
              holder: str) -> AlignmentTrace:
        g11, g12, g21, g22 = (g * (1.0 + gain_error) for g in channel.gain)
        det = g11 * g22 - g12 * g21
        inv = ((g22 / det, -g12 / det), (-g21 / det, g11 / det))
        trace = AlignmentTrace(channel.beam_id)
        tx, ty = channel.target
        for iteration in range(channel.max_iterations + 1):
            centroid = self._measure(channel.camera)
            ex, ey = tx - centroid[0], ty - centroid[1]
            error_norm = math.hypot(ex, ey)
            moves = (0, 0)
            if error_norm > channel.tolerance_px and iteration < channel.max_iterations:
                sx = inv[0][0] * ex + inv[0][1] * ey
                sy = inv[1][0] * ex + inv[1][1] * ey
                moves = (round(sx), round(sy))
            trace.iterations.append({
                "centroid": [round(centroid[0], 4), round(centroid[1], 4)],
                "error_norm": error_norm,
                "moves": list(moves),
            })
            self._publish_progress(channel.beam_id, trace.iterations[-1])
            if error_norm <= channel.tolerance_px:
                trace.converged = True
                break
            if moves == (0, 0):
                break  # iteration budget exhausted
            self._move(channel.motor_x, moves[0], holder)
            self._move(channel.motor_y, moves[1], holder)
            settle = (max(abs(moves[0]), abs(moves[1])) / channel.motor_rate) + 0.05
            self.advance_fn(settle)
        if self.events is not None:
            self.events.log(f"sup/{self.name}", "device_status", {
                "op": "alignment", "beam": channel.beam_id,
                "converged": trace.converged,
                "iterations": len(trace.iterations)})
        return trace

    def _measure(self, camera: str) -> tuple[float, float]:
        raw = self.bus.request(f"pt/{camera}",
                               json.dumps({"op": "get_frame"}).encode(),
                               5.0, source=f"sup/{self.name}")
        return compute_centroid(decode_frame(raw))

    def _move(self, motor: str, steps: int, holder: str) -> None:
        if steps == 0:
            return
        try:
            call_json(self.bus, f"pt/{motor}",
                      {"op": "move_relative", "args": {"steps": steps},
                       "holder": holder}, 5.0, source=holder)
        except Exception as exc:
            raise DeviceFault(f"{motor}: {exc}") from None

    def _publish_progress(self, beam_id: str, step: dict) -> None:
        self.bus.publish(f"align/{beam_id}",
                         json.dumps(step, sort_keys=True).encode(),
                         source=f"sup/{self.name}")

    def on_setup(self, shot_id, params):
        # countdown setup verifies alignment rather than re-running loops
        checked = {}
        for beam_id, channel in sorted(self.channels.items()):
            centroid = self._measure(channel.camera)
            err = math.hypot(channel.target[0] - centroid[0],
                             channel.target[1] - centroid[1])
            checked[beam_id] = err
        return {"alignment_errors_px": {k: round(v, 4) for k, v in checked.items()}}
