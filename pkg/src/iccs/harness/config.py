"""Facility configuration: parsing, validation, and scaled profile generation.

The shipped "8beam" profile scales the full facility's inventory down by
beams/192 with round-half-up arithmetic: 45,000 supervisory control points
become 1,875; the 14,000-point industrial segment becomes 583; 300 FEPs
become 13; 500 cameras become 21. The profile generator allocates those
totals exactly and records the rule in `scale_note`.

Config text is line oriented: a `fep <id>` line opens a front-end
processor; `point`/`pointset` lines add devices to it; `plc_*` lines build
the interlock segment; `sup`, `power_module`, `diag`, `budget`, and
`fire_permissive` lines wire the supervisory layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from iccs.fep.runtime import PointSpec
from iccs.plc import SLOW_CHANNEL_KINDS

FULL_SCALE = {
    "beams": 192,
    "control_points": 45_000,
    "plc_points": 14_000,
    "feps": 300,
    "cameras": 500,
    "systems": 750,
}

SUPERVISOR_NAMES = ("alignment", "lpom", "power", "laser_diag",
                    "target_diag", "pockels", "shot_services")


class ParseError(Exception):
    pass


class ValidationError(Exception):
    pass


def round_half_up(value: float) -> int:
    return int(value + 0.5)


def scaled_counts(beams: int) -> dict[str, int]:
    ratio = beams / FULL_SCALE["beams"]
    return {
        "control_points": round_half_up(FULL_SCALE["control_points"] * ratio),
        "plc_points": round_half_up(FULL_SCALE["plc_points"] * ratio),
        "feps": round_half_up(FULL_SCALE["feps"] * ratio),
        "cameras": round_half_up(FULL_SCALE["cameras"] * ratio),
    }


@dataclass
class Budgets:
    """Scaled latency/throughput budgets the metrics report checks against."""

    alert_p99_s: float = 1.0
    status_p99_s: float = 10.0
    command_p99_s: float = 0.1
    video_fps: float = 10.0
    recovery_s: float = 30.0
    restart_s: float = 10.0

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class FepConfig:
    fep_id: str
    points: list[PointSpec] = field(default_factory=list)


@dataclass
class InputConfig:
    input_id: str
    safe: bool = True
    initial: bool | None = None  # default: the safe value


@dataclass
class ChainConfig:
    action_id: str
    terms: list[tuple[str, bool]] = field(default_factory=list)


@dataclass
class ChannelConfig:
    channel_id: str
    kind: str
    value: float
    setpoint: float
    tau_s: float
    minimum: float
    maximum: float
    units: str = ""


@dataclass
class PlcConfig:
    inputs: list[InputConfig] = field(default_factory=list)
    chains: list[ChainConfig] = field(default_factory=list)
    channels: list[ChannelConfig] = field(default_factory=list)
    scan_period_s: float = 0.1

    def point_count(self) -> int:
        return len(self.inputs) + len(self.channels)


@dataclass
class PowerModuleConfig:
    module_id: str
    charge_rate_vps: float = 20_000.0
    target_v: float = 18_000.0


@dataclass
class FacilityConfig:
    name: str = "facility"
    beams: int = 1
    seed: int = 0
    tick_period_s: float = 0.1
    heartbeat_s: float = 1.0
    scale_note: str = ""
    feps: list[FepConfig] = field(default_factory=list)
    plc: PlcConfig = field(default_factory=PlcConfig)
    supervisors: list[str] = field(default_factory=lambda: list(SUPERVISOR_NAMES))
    power_modules: list[PowerModuleConfig] = field(default_factory=list)
    diag_sources: list[str] = field(default_factory=list)
    target_diag_sources: list[str] = field(default_factory=list)
    budgets: Budgets = field(default_factory=Budgets)
    fire_permissives: list[str] = field(default_factory=list)

    # -- derived views ------------------------------------------------------

    def point_count(self) -> int:
        return sum(len(f.points) for f in self.feps)

    def camera_count(self) -> int:
        return sum(1 for f in self.feps for p in f.points if p.kind == "camera")

    def all_points(self) -> dict[str, PointSpec]:
        return {p.point_id: p for f in self.feps for p in f.points}

    def point_owner(self) -> dict[str, str]:
        return {p.point_id: f.fep_id for f in self.feps for p in f.points}

    def shutters(self) -> list[str]:
        return sorted(p.point_id for f in self.feps for p in f.points
                      if p.kind == "shutter")

    def validate(self) -> None:
        seen: set[str] = set()
        for fep in self.feps:
            for point in fep.points:
                if point.point_id in seen:
                    raise ValidationError(f"duplicate point_id {point.point_id}")
                seen.add(point.point_id)
        for fep in self.feps:
            local = {p.point_id for p in fep.points}
            for point in fep.points:
                if point.kind != "camera":
                    continue
                for axis in ("motor_x", "motor_y"):
                    ref = point.params.get(axis)
                    if ref and ref not in local:
                        raise ValidationError(
                            f"{point.point_id}: {axis}={ref} not on FEP {fep.fep_id}")
        owners = self.point_owner()
        armable = {"transient_digitizer", "calorimeter", "camera"}
        points = self.all_points()
        for source in self.diag_sources + self.target_diag_sources:
            if source not in owners:
                raise ValidationError(f"diag source {source} is not a point")
            if points[source].kind not in armable:
                raise ValidationError(f"diag source {source} is not armable")
        input_ids = {i.input_id for i in self.plc.inputs}
        if len(input_ids) != len(self.plc.inputs):
            raise ValidationError("duplicate plc input ids")
        for chain in self.plc.chains:
            if not chain.terms:
                raise ValidationError(f"chain {chain.action_id} has no terms")
            for input_id, _ in chain.terms:
                if input_id not in input_ids:
                    raise ValidationError(
                        f"chain {chain.action_id} references unknown {input_id}")
        chain_ids = {c.action_id for c in self.plc.chains}
        for module in self.power_modules:
            if f"power/{module.module_id}/charge" not in chain_ids:
                raise ValidationError(
                    f"missing charge permissive chain for {module.module_id}")
        for permissive in self.fire_permissives:
            if permissive not in chain_ids:
                raise ValidationError(f"unknown fire permissive {permissive}")
        for budget_name, value in self.budgets.to_dict().items():
            if value <= 0:
                raise ValidationError(f"budget {budget_name} must be > 0")
        for name in self.supervisors:
            if name not in SUPERVISOR_NAMES:
                raise ValidationError(f"unknown supervisor {name}")


# -- parsing ---------------------------------------------------------------


def _parse_params(tokens: list[str]) -> dict:
    params = {}
    for token in tokens:
        key, _, value = token.partition("=")
        if not _:
            raise ValueError(f"expected key=value, got {token!r}")
        params[key] = value
    return params


def _num(value: str) -> float:
    return float(value)


def parse_config(text: str, name: str = "facility") -> FacilityConfig:
    config = FacilityConfig(name=name)
    current_fep: FepConfig | None = None
    sup_lines: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "facility":
                config.name = parts[1]
            elif key == "beams":
                config.beams = int(parts[1])
            elif key == "seed":
                config.seed = int(parts[1])
            elif key == "tick_period_s":
                config.tick_period_s = _num(parts[1])
            elif key == "heartbeat_s":
                config.heartbeat_s = _num(parts[1])
            elif key == "scale_note":
                config.scale_note = line.partition(" ")[2].strip()
            elif key == "budget":
                if not hasattr(config.budgets, parts[1]):
                    raise ValueError(f"unknown budget {parts[1]!r}")
                setattr(config.budgets, parts[1], _num(parts[2]))
            elif key == "sup":
                sup_lines.append(parts[1])
            elif key == "power_module":
                params = _parse_params(parts[2:])
                config.power_modules.append(PowerModuleConfig(
                    parts[1],
                    charge_rate_vps=_num(params.get("rate", "20000")),
                    target_v=_num(params.get("target", "18000"))))
            elif key == "fep":
                current_fep = FepConfig(parts[1])
                config.feps.append(current_fep)
            elif key == "point":
                if current_fep is None:
                    raise ValueError("point line before any fep line")
                current_fep.points.append(PointSpec(
                    parts[1], parts[2], _parse_params(parts[3:])))
            elif key == "pointset":
                if current_fep is None:
                    raise ValueError("pointset line before any fep line")
                prefix, count, kind = parts[1], int(parts[2]), parts[3]
                params = _parse_params(parts[4:])
                for i in range(count):
                    current_fep.points.append(PointSpec(
                        f"{prefix}{i:03d}", kind, dict(params)))
            elif key == "diag":
                config.diag_sources.append(parts[1])
            elif key == "target_diag":
                config.target_diag_sources.append(parts[1])
            elif key == "plc_input":
                params = _parse_params(parts[2:])
                safe = params.get("safe", "1") == "1"
                initial = params.get("initial")
                config.plc.inputs.append(InputConfig(
                    parts[1], safe,
                    None if initial is None else initial == "1"))
            elif key == "plc_inputset":
                prefix, count = parts[1], int(parts[2])
                for i in range(count):
                    config.plc.inputs.append(InputConfig(f"{prefix}{i:03d}"))
            elif key == "plc_chain":
                terms = []
                for token in parts[2:]:
                    input_id, _, required = token.partition("=")
                    terms.append((input_id, required == "1"))
                config.plc.chains.append(ChainConfig(parts[1], terms))
            elif key == "plc_channel":
                params = _parse_params(parts[3:])
                config.plc.channels.append(ChannelConfig(
                    parts[1], parts[2],
                    value=_num(params.get("value", "0")),
                    setpoint=_num(params.get("setpoint", "0")),
                    tau_s=_num(params.get("tau", "1")),
                    minimum=_num(params.get("min", "-1e9")),
                    maximum=_num(params.get("max", "1e9")),
                    units=params.get("units", "")))
            elif key == "plc_scan_period_s":
                config.plc.scan_period_s = _num(parts[1])
            elif key == "fire_permissive":
                config.fire_permissives.append(parts[1])
            else:
                raise ValueError(f"unknown config key {key!r}")
        except (IndexError, ValueError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    if sup_lines:
        config.supervisors = sup_lines
    config.validate()
    return config


def load_config(path: str | Path) -> FacilityConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), name=path.stem)


def resolve_data_path(ref: str,
                      kinds: tuple[str, ...] = (".cfg", ".plan", ".script", "")
                      ) -> Path:
    """Resolve '@name' references against the packaged data directory.

    `kinds` orders the suffixes tried, so a plan lookup prefers name.plan
    even when name.cfg also ships.
    """
    if ref.startswith("@"):
        base = resources.files("iccs") / "data"
        for suffix in kinds:
            candidate = Path(str(base / f"{ref[1:]}{suffix}"))
            if candidate.exists():
                return candidate
        raise FileNotFoundError(f"no packaged data file for {ref}")
    return Path(ref)


# -- rendering ----------------------------------------------------------------


def render_config(config: FacilityConfig) -> str:
    lines = [f"facility {config.name}", f"beams {config.beams}",
             f"seed {config.seed}",
             f"tick_period_s {config.tick_period_s}",
             f"heartbeat_s {config.heartbeat_s}"]
    if config.scale_note:
        lines.append(f"scale_note {config.scale_note}")
    for budget_name, value in config.budgets.to_dict().items():
        lines.append(f"budget {budget_name} {value}")
    for sup in config.supervisors:
        lines.append(f"sup {sup}")
    for module in config.power_modules:
        lines.append(f"power_module {module.module_id} "
                     f"rate={module.charge_rate_vps:g} target={module.target_v:g}")
    for permissive in config.fire_permissives:
        lines.append(f"fire_permissive {permissive}")
    for fep in config.feps:
        lines.append(f"fep {fep.fep_id}")
        for point in fep.points:
            params = " ".join(f"{k}={v}" for k, v in point.params.items())
            lines.append(f"point {point.point_id} {point.kind} {params}".rstrip())
    for source in config.diag_sources:
        lines.append(f"diag {source}")
    for source in config.target_diag_sources:
        lines.append(f"target_diag {source}")
    lines.append(f"plc_scan_period_s {config.plc.scan_period_s}")
    for inp in config.plc.inputs:
        extra = "" if inp.safe else " safe=0"
        if inp.initial is not None:
            extra += f" initial={'1' if inp.initial else '0'}"
        lines.append(f"plc_input {inp.input_id}{extra}")
    for chain in config.plc.chains:
        terms = " ".join(f"{i}={'1' if r else '0'}" for i, r in chain.terms)
        lines.append(f"plc_chain {chain.action_id} {terms}")
    for ch in config.plc.channels:
        lines.append(f"plc_channel {ch.channel_id} {ch.kind} value={ch.value:g} "
                     f"setpoint={ch.setpoint:g} tau={ch.tau_s:g} "
                     f"min={ch.minimum:g} max={ch.maximum:g}")
    return "\n".join(lines) + "\n"


# -- profile generation -----------------------------------------------------------


def generate_profile(beams: int = 8, seed: int = 0) -> FacilityConfig:
    """Build the scaled default profile with exact inventory totals."""
    counts = scaled_counts(beams)
    config = FacilityConfig(
        name=f"{beams}beam", beams=beams, seed=seed,
        scale_note=(f"counts scaled from 192-beam facility totals by "
                    f"{beams}/192, rounded half up"),
        supervisors=list(SUPERVISOR_NAMES))

    beam_ids = [f"b{i + 1:02d}" for i in range(beams)]

    # camera allocation: 2 per beam + 1 target camera; the rest on a video FEP
    video_cameras = counts["cameras"] - 2 * beams - 1
    if video_cameras < 0:
        raise ValidationError(f"{beams} beams: camera scaling too tight")

    # fixed per-beam complement; photodiodes absorb the remaining points
    per_beam_fixed = 2 + 1 + 2 + 20 + 60  # motors, shutter, cameras, cals, digis
    target_points = 1 + 12 + 12
    shotsvc_points = 2
    fixed_total = beams * per_beam_fixed + video_cameras + target_points + shotsvc_points
    photodiodes = counts["control_points"] - fixed_total
    if photodiodes < 0:
        raise ValidationError(f"{beams} beams: point scaling too tight")
    probe_feps = max(counts["feps"] - beams - 3, 0)
    per_beam_pd = photodiodes // (beams + probe_feps)
    probe_pd = per_beam_pd
    leftover = photodiodes - per_beam_pd * (beams + probe_feps)

    camera_params = {"width": "64", "height": "64", "spot_sigma": "2.5",
                     "amplitude": "12000", "noise_level": "0.01",
                     "frame_rate_hz": "10"}

    for beam in beam_ids:
        fep = FepConfig(beam)
        fep.points.append(PointSpec(f"{beam}/align/mx", "stepper_motor",
                                    {"rate": "200", "min": "-100000",
                                     "max": "100000"}))
        fep.points.append(PointSpec(f"{beam}/align/my", "stepper_motor",
                                    {"rate": "200", "min": "-100000",
                                     "max": "100000"}))
        fep.points.append(PointSpec(f"{beam}/align/sh", "shutter", {}))
        align_cam = dict(camera_params)
        align_cam.update({"motor_x": f"{beam}/align/mx",
                          "motor_y": f"{beam}/align/my",
                          "g11": "0.05", "g22": "0.05"})
        fep.points.append(PointSpec(f"{beam}/align/cam", "camera", align_cam))
        fep.points.append(PointSpec(f"{beam}/beam/cam", "camera",
                                    dict(camera_params)))
        for i in range(20):
            fep.points.append(PointSpec(f"{beam}/diag/cal{i:03d}", "calorimeter",
                                        {"nominal_energy_j": "100"}))
        for i in range(60):
            fep.points.append(PointSpec(f"{beam}/diag/dig{i:03d}",
                                        "transient_digitizer",
                                        {"record_length": "256"}))
        pd_count = per_beam_pd + (1 if leftover > 0 else 0)
        if leftover > 0:
            leftover -= 1
        for i in range(pd_count):
            fep.points.append(PointSpec(f"{beam}/diag/pd{i:03d}", "photodiode", {}))
        config.feps.append(fep)
        config.diag_sources.extend([f"{beam}/diag/dig000", f"{beam}/diag/dig001",
                                    f"{beam}/diag/cal000", f"{beam}/align/cam"])
        config.power_modules.append(PowerModuleConfig(f"pcs_{beam}"))

    video = FepConfig("video")
    for i in range(video_cameras):
        video.points.append(PointSpec(f"fac/video/cam{i:02d}", "camera",
                                      dict(camera_params)))
    config.feps.append(video)

    target = FepConfig("target")
    target.points.append(PointSpec("fac/target/cam", "camera", dict(camera_params)))
    for i in range(12):
        target.points.append(PointSpec(f"fac/target/cal{i:02d}", "calorimeter",
                                       {"nominal_energy_j": "50"}))
    for i in range(12):
        target.points.append(PointSpec(f"fac/target/dig{i:02d}",
                                       "transient_digitizer",
                                       {"record_length": "512"}))
    config.feps.append(target)
    config.target_diag_sources = ["fac/target/cam", "fac/target/cal00",
                                  "fac/target/dig00", "fac/target/dig01",
                                  "fac/target/dig02"]

    shotsvc = FepConfig("shotsvc")
    shotsvc.points.append(PointSpec("fac/svc/sh0", "shutter", {}))
    shotsvc.points.append(PointSpec("fac/svc/sh1", "shutter", {}))
    config.feps.append(shotsvc)

    for probe_index in range(probe_feps):
        probe = FepConfig(f"probe{probe_index + 1}")
        extra = probe_pd + (1 if leftover > 0 else 0)
        if leftover > 0:
            leftover -= 1
        for i in range(extra):
            probe.points.append(PointSpec(
                f"fac/probe{probe_index + 1}/pd{i:03d}", "photodiode", {}))
        config.feps.append(probe)

    # industrial segment: channels then inputs to land the scaled total
    channels: list[ChannelConfig] = [
        ChannelConfig("fac_vac_tc", "vacuum_pressure", 760.0, 1e-6, 5.0,
                      0.0, 1000.0, "torr"),
        ChannelConfig("fac_vac_sf", "vacuum_pressure", 760.0, 1e-5, 8.0,
                      0.0, 1000.0, "torr"),
        ChannelConfig("fac_air_temp", "air_temp", 21.0, 20.0, 60.0,
                      0.0, 45.0, "degC"),
    ]
    for beam in beam_ids:
        channels.append(ChannelConfig(f"argon_{beam}", "argon_flow",
                                      10.0, 12.0, 4.0, 0.0, 50.0, "slpm"))
        channels.append(ChannelConfig(f"amp_temp_{beam}", "air_temp",
                                      22.0, 22.0, 30.0, 0.0, 60.0, "degC"))
    config.plc.channels = channels

    inputs: list[InputConfig] = [
        InputConfig("fac_door_main"), InputConfig("fac_door_sw"),
        InputConfig("fac_hatch_tc"), InputConfig("fac_estop_clear"),
    ]
    remaining_inputs = counts["plc_points"] - len(channels) - len(inputs)
    per_beam_inputs = remaining_inputs // beams
    extra_inputs = remaining_inputs - per_beam_inputs * beams
    for beam in beam_ids:
        inputs.append(InputConfig(f"door_{beam}"))
        inputs.append(InputConfig(f"hatch_{beam}"))
        for i in range(per_beam_inputs - 2):
            inputs.append(InputConfig(f"ilk_{beam}_{i:03d}"))
    for i in range(extra_inputs):
        inputs.append(InputConfig(f"ilk_fac_{i:03d}"))
    config.plc.inputs = inputs

    chains: list[ChainConfig] = []
    for beam in beam_ids:
        chains.append(ChainConfig(f"shutter/{beam}/open",
                                  [(f"door_{beam}", True),
                                   (f"hatch_{beam}", True),
                                   ("fac_estop_clear", True)]))
        chains.append(ChainConfig(f"power/pcs_{beam}/charge",
                                  [(f"door_{beam}", True),
                                   ("fac_door_main", True),
                                   ("fac_estop_clear", True)]))
    fire_terms = [(f"door_{beam}", True) for beam in beam_ids]
    fire_terms += [("fac_door_main", True), ("fac_hatch_tc", True),
                   ("fac_estop_clear", True)]
    chains.append(ChainConfig("shot/fire", fire_terms[:12]))
    config.plc.chains = chains
    config.fire_permissives = ["shot/fire"]

    config.validate()
    return config


def mini_profile(seed: int = 0, beams: int = 1) -> FacilityConfig:
    """Small, fast profile for unit tests and quick scripted demos."""
    config = FacilityConfig(name="mini", beams=beams, seed=seed,
                            scale_note="hand-built test profile")
    for index in range(beams):
        beam = f"b{index + 1:02d}"
        fep = FepConfig(beam)
        fep.points = [
            PointSpec(f"{beam}/align/mx", "stepper_motor",
                      {"rate": "200", "min": "-100000", "max": "100000"}),
            PointSpec(f"{beam}/align/my", "stepper_motor",
                      {"rate": "200", "min": "-100000", "max": "100000"}),
            PointSpec(f"{beam}/align/sh", "shutter", {}),
            PointSpec(f"{beam}/align/cam", "camera",
                      {"width": "64", "height": "64",
                       "motor_x": f"{beam}/align/mx",
                       "motor_y": f"{beam}/align/my",
                       "g11": "0.05", "g22": "0.05", "frame_rate_hz": "10"}),
            PointSpec(f"{beam}/diag/dig000", "transient_digitizer",
                      {"record_length": "64"}),
            PointSpec(f"{beam}/diag/dig001", "transient_digitizer",
                      {"record_length": "64"}),
            PointSpec(f"{beam}/diag/cal000", "calorimeter",
                      {"nominal_energy_j": "100"}),
            PointSpec(f"{beam}/diag/pd000", "photodiode", {}),
        ]
        config.feps.append(fep)
        config.diag_sources.extend(
            [f"{beam}/diag/dig000", f"{beam}/diag/dig001", f"{beam}/diag/cal000"])
        config.power_modules.append(
            PowerModuleConfig(f"pcs_{beam}", charge_rate_vps=20_000.0,
                              target_v=10_000.0))
    config.supervisors = ["alignment", "lpom", "power", "laser_diag",
                          "pockels", "shot_services"]
    config.plc.inputs = [InputConfig("door_main"), InputConfig("estop_clear")]
    config.plc.chains = [
        ChainConfig("shot/fire", [("door_main", True), ("estop_clear", True)]),
    ]
    for module in config.power_modules:
        config.plc.chains.append(ChainConfig(
            f"power/{module.module_id}/charge",
            [("door_main", True), ("estop_clear", True)]))
    config.plc.channels = [ChannelConfig("vac_tc", "vacuum_pressure",
                                         760.0, 1e-6, 2.0, 0.0, 1000.0)]
    config.fire_permissives = ["shot/fire"]
    config.validate()
    return config
