"""Deterministic simulated device models hosted by front-end processors.

Every stochastic draw is seeded from (facility seed, point id, context), so
a replay with the same seed and command history reproduces device state and
shot data bit for bit. Motor kinematics use integer millisteps so that
advancing in many small steps composes exactly with one large step.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct

import numpy as np

from iccs.rpc import register_errors

DEVICE_KINDS = ("stepper_motor", "transient_digitizer", "calorimeter",
                "photodiode", "camera", "shutter")
ARMABLE_KINDS = ("transient_digitizer", "calorimeter", "camera")

NS_PER_S = 1_000_000_000


class InvalidDeviceParams(Exception):
    pass


class KindMismatch(Exception):
    pass


class LimitViolation(Exception):
    pass


class NotArmable(Exception):
    pass


class AlreadyArmed(Exception):
    pass


register_errors(InvalidDeviceParams, KindMismatch, LimitViolation,
                NotArmable, AlreadyArmed)


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary key parts (hash-salt independent)."""
    text = "/".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def encode_frame(pixels: np.ndarray) -> bytes:
    """Camera frame wire format: u16 width, u16 height, row-major u16 BE."""
    h, w = pixels.shape
    return struct.pack(">HH", w, h) + pixels.astype(">u2").tobytes()


def decode_frame(data: bytes) -> np.ndarray:
    w, h = struct.unpack_from(">HH", data, 0)
    pixels = np.frombuffer(data, dtype=">u2", offset=4)
    if pixels.size != w * h:
        raise ValueError(f"frame payload {pixels.size} != {w}x{h}")
    return pixels.reshape(h, w).astype(np.uint16)


class DeviceModel:
    """Base device: advances on the simulation clock, answers commands."""

    kind = "abstract"
    armable = False

    def __init__(self, point_id: str, params: dict, seed: int):
        self.point_id = point_id
        self.params = params
        self.units = params.get("units", "")
        self.seed = seed
        self.health = "ok"
        self.health_detail = ""
        self.armed_for: str | None = None

    def advance(self, now_ns: int) -> None:
        pass

    def value(self):
        raise NotImplementedError

    def extra(self) -> dict:
        """Kind-specific state worth publishing alongside the value."""
        if self.armable:
            return {"armed_for": self.armed_for}
        return {}

    def command(self, op: str, args: dict, now_ns: int) -> dict:
        raise KindMismatch(f"{self.point_id}: {self.kind} has no command {op!r}")

    def arm(self, shot_id: str) -> None:
        if not self.armable:
            raise NotArmable(f"{self.point_id} is a {self.kind}")
        if self.armed_for is not None and self.armed_for != shot_id:
            raise AlreadyArmed(f"{self.point_id} armed for {self.armed_for}")
        self.armed_for = shot_id

    def disarm(self) -> None:
        self.armed_for = None

    def capture(self, shot_id: str, fired_ps: int) -> bytes:
        raise NotArmable(f"{self.point_id} cannot capture")

    def fault(self, detail: str) -> None:
        self.health = "fault"
        self.health_detail = detail

    def clear_fault(self) -> None:
        self.health = "ok"
        self.health_detail = ""


class StepperMotor(DeviceModel):
    """Constant-rate integer-step axis with hard soft-limits.

    Position is derived from absolute elapsed time since the move started,
    in integer millisteps, so advance(0.5)+advance(0.5) == advance(1.0).
    """

    kind = "stepper_motor"

    def __init__(self, point_id, params, seed):
        super().__init__(point_id, params, seed)
        self.rate = float(params.get("rate", 100.0))
        self.soft_min = int(params.get("min", -1_000_000))
        self.soft_max = int(params.get("max", 1_000_000))
        self.position = int(params.get("position", 0))
        if self.rate <= 0:
            raise InvalidDeviceParams(f"{point_id}: rate must be > 0")
        if self.soft_min > self.soft_max:
            raise InvalidDeviceParams(f"{point_id}: min > max")
        if not (self.soft_min <= self.position <= self.soft_max):
            raise InvalidDeviceParams(f"{point_id}: initial position outside limits")
        self._rate_msps = round(self.rate * 1000)  # millisteps per second
        self.target = self.position
        self.moving = False
        self._move_start_ns = 0
        self._move_from = self.position

    def command(self, op, args, now_ns):
        if op == "move_absolute":
            return self._start_move(int(args["target"]), now_ns)
        if op == "move_relative":
            return self._start_move(self.position + int(args["steps"]), now_ns)
        if op == "stop":
            self.advance(now_ns)
            self.target = self.position
            self.moving = False
            return {"position": self.position}
        return super().command(op, args, now_ns)

    def _start_move(self, target: int, now_ns: int) -> dict:
        self.advance(now_ns)
        if not (self.soft_min <= target <= self.soft_max):
            self.health = "warning"
            self.health_detail = (f"move to {target} rejected: soft limits "
                                  f"[{self.soft_min}, {self.soft_max}]")
            raise LimitViolation(self.health_detail)
        self.health = "ok"
        self.health_detail = ""
        self.target = target
        self._move_from = self.position
        self._move_start_ns = now_ns
        self.moving = self.target != self.position
        return {"position": self.position, "target": self.target,
                "moving": self.moving}

    def advance(self, now_ns):
        if not self.moving:
            return
        elapsed_ns = now_ns - self._move_start_ns
        if elapsed_ns < 0:
            return
        steps = (self._rate_msps * elapsed_ns) // (1000 * NS_PER_S)
        distance = abs(self.target - self._move_from)
        if steps >= distance:
            self.position = self.target
            self.moving = False
        else:
            sign = 1 if self.target > self._move_from else -1
            self.position = self._move_from + sign * int(steps)

    def value(self):
        return self.position

    def extra(self):
        return {"target": self.target, "moving": self.moving}


class TransientDigitizer(DeviceModel):
    """Captures one synthetic waveform per armed shot at trigger time."""

    kind = "transient_digitizer"
    armable = True

    def __init__(self, point_id, params, seed):
        super().__init__(point_id, params, seed)
        self.sample_rate = float(params.get("sample_rate", 1e9))
        self.record_length = int(params.get("record_length", 256))
        self.amplitude = int(params.get("amplitude", 8000))
        self.noise = float(params.get("noise", 20.0))
        if self.record_length <= 0:
            raise InvalidDeviceParams(f"{point_id}: record_length must be > 0")
        self.waveform: list[int] | None = None

    def command(self, op, args, now_ns):
        if op == "arm":
            self.arm(args["shot_id"])
            return {"armed_for": self.armed_for}
        if op == "disarm":
            self.disarm()
            return {"armed_for": None}
        return super().command(op, args, now_ns)

    def capture(self, shot_id, fired_ps):
        rng = random.Random(derive_seed(self.seed, self.point_id, shot_id))
        n = self.record_length
        center = n / 3.0
        width = max(n / 16.0, 1.0)
        wave = []
        for i in range(n):
            pulse = self.amplitude * math.exp(-((i - center) / width) ** 2)
            sample = int(round(pulse + rng.gauss(0.0, self.noise)))
            wave.append(max(-32768, min(32767, sample)))
        self.waveform = wave
        return struct.pack(f">{n}h", *wave)

    def value(self):
        if self.waveform is None:
            return 0
        return max(self.waveform)

    def summary(self) -> dict:
        if self.waveform is None:
            return {}
        return {"min": min(self.waveform), "max": max(self.waveform),
                "mean": sum(self.waveform) / len(self.waveform)}


class Calorimeter(DeviceModel):
    """Reads scenario-injected beam energy with multiplicative noise."""

    kind = "calorimeter"
    armable = True

    def __init__(self, point_id, params, seed):
        super().__init__(point_id, params, seed)
        self.beam_energy_j = float(params.get("nominal_energy_j", 100.0))
        self.noise_frac = float(params.get("noise_frac", 0.01))
        self.last_energy_j: float | None = None

    def command(self, op, args, now_ns):
        if op == "set_beam_energy":
            self.beam_energy_j = float(args["energy_j"])
            return {"energy_j": self.beam_energy_j}
        return super().command(op, args, now_ns)

    def capture(self, shot_id, fired_ps):
        rng = random.Random(derive_seed(self.seed, self.point_id, shot_id))
        self.last_energy_j = self.beam_energy_j * (1.0 + rng.gauss(0.0, self.noise_frac))
        return struct.pack(">d", self.last_energy_j)

    def value(self):
        return self.last_energy_j if self.last_energy_j is not None else self.beam_energy_j


class Photodiode(DeviceModel):
    """Scalar optical power sample, lightly noisy, resampled on heartbeat."""

    kind = "photodiode"

    def __init__(self, point_id, params, seed):
        super().__init__(point_id, params, seed)
        self.base_power_w = float(params.get("power_w", 1.0))
        self.noise_frac = float(params.get("noise_frac", 0.002))
        self._rng = random.Random(derive_seed(seed, point_id, "pd"))
        self._sample = self.base_power_w

    def advance(self, now_ns):
        self._sample = self.base_power_w * (1.0 + self._rng.gauss(0.0, self.noise_frac))

    def value(self):
        return round(self._sample, 9)


class Camera(DeviceModel):
    """Gaussian-spot imager; spot position follows two coupled motor axes."""

    kind = "camera"
    armable = True

    def __init__(self, point_id, params, seed):
        super().__init__(point_id, params, seed)
        self.width = int(params.get("width", 64))
        self.height = int(params.get("height", 64))
        if self.width <= 0 or self.height <= 0:
            raise InvalidDeviceParams(f"{point_id}: frame must be non-empty")
        self.spot_sigma = float(params.get("spot_sigma", 3.0))
        self.amplitude = float(params.get("amplitude", 10_000.0))
        self.noise_level = float(params.get("noise_level", 0.0))
        self.frame_rate_hz = float(params.get("frame_rate_hz", 10.0))
        self.base_cx = float(params.get("base_cx", (self.width - 1) / 2))
        self.base_cy = float(params.get("base_cy", (self.height - 1) / 2))
        # pixels of spot motion per motor step, row-major 2x2
        self.gain = [float(params.get("g11", 0.05)), float(params.get("g12", 0.0)),
                     float(params.get("g21", 0.0)), float(params.get("g22", 0.05))]
        self.motor_x: StepperMotor | None = None
        self.motor_y: StepperMotor | None = None
        self._frame_count = 0

    def attach_motors(self, motor_x: StepperMotor | None,
                      motor_y: StepperMotor | None) -> None:
        self.motor_x = motor_x
        self.motor_y = motor_y

    def spot_center(self) -> tuple[float, float]:
        mx = self.motor_x.position if self.motor_x is not None else 0
        my = self.motor_y.position if self.motor_y is not None else 0
        g11, g12, g21, g22 = self.gain
        return (self.base_cx + g11 * mx + g12 * my,
                self.base_cy + g21 * mx + g22 * my)

    def frame(self) -> np.ndarray:
        cx, cy = self.spot_center()
        y, x = np.mgrid[0:self.height, 0:self.width]
        spot = self.amplitude * np.exp(
            -((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * self.spot_sigma ** 2))
        if self.noise_level > 0:
            rng = np.random.default_rng(
                derive_seed(self.seed, self.point_id, self._frame_count))
            spot = spot + rng.uniform(0.0, self.noise_level * self.amplitude,
                                      size=spot.shape)
        self._frame_count += 1
        return np.clip(np.round(spot), 0, 65535).astype(np.uint16)

    def capture(self, shot_id, fired_ps):
        return encode_frame(self.frame())

    def value(self):
        cx, cy = self.spot_center()
        return [round(cx, 3), round(cy, 3)]


class Shutter(DeviceModel):
    """Binary beam gate; closes instantly on command."""

    kind = "shutter"

    def __init__(self, point_id, params, seed):
        super().__init__(point_id, params, seed)
        self.open = bool(int(params.get("open", 0)))

    def command(self, op, args, now_ns):
        if op == "open":
            self.open = True
            return {"open": True}
        if op == "close":
            self.open = False
            return {"open": False}
        return super().command(op, args, now_ns)

    def value(self):
        return 1 if self.open else 0


_MODEL_CLASSES = {
    "stepper_motor": StepperMotor,
    "transient_digitizer": TransientDigitizer,
    "calorimeter": Calorimeter,
    "photodiode": Photodiode,
    "camera": Camera,
    "shutter": Shutter,
}


def build_device(point_id: str, kind: str, params: dict, seed: int) -> DeviceModel:
    cls = _MODEL_CLASSES.get(kind)
    if cls is None:
        raise InvalidDeviceParams(f"{point_id}: unknown device kind {kind!r}")
    return cls(point_id, params, seed)
