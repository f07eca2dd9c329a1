"""Front-end processor: hosts control points, executes commands, arms for
shots, and propagates status.

All command and tick processing for one FEP is serialized: commands arrive
through the FEP's bus host queue, device ticks through `advance`, and a
single state lock keeps the two honest in wall-clock mode. Multiple FEPs
run fully concurrently.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass

from iccs.bus.core import Bus, ServiceHost
from iccs.clock import Clock
from iccs.fep.devices import (
    Camera,
    DeviceModel,
    KindMismatch,
    Photodiode,
    StepperMotor,
    build_device,
    encode_frame,
)
from iccs.rpc import json_handler, register_errors

_HEALTH_RANK = {"ok": 0, "warning": 1, "fault": 2}


class DuplicatePointId(Exception):
    pass


class UnknownPoint(Exception):
    pass


class NotReservationHolder(Exception):
    pass


class ShotUnknown(Exception):
    pass


register_errors(DuplicatePointId, UnknownPoint, NotReservationHolder, ShotUnknown)


@dataclass(frozen=True)
class PointSpec:
    point_id: str
    kind: str
    params: dict


@dataclass(frozen=True)
class StatusReading:
    point_id: str
    value: object
    health: str
    ts_ns: int
    iso: str

    def to_dict(self) -> dict:
        return {"point_id": self.point_id, "value": self.value,
                "health": self.health, "ts_ns": self.ts_ns, "iso": self.iso}


@dataclass(frozen=True)
class CommandAck:
    accepted: bool
    reason: str
    result: dict


@dataclass(frozen=True)
class ShotDataRecord:
    shot_id: str
    point_id: str
    kind: str
    payload: bytes
    acquired_ps: int
    summary: dict


class Fep:
    """One front-end processor and its simulated device complement."""

    def __init__(self, fep_id: str, bus: Bus, clock: Clock,
                 points: list[PointSpec], *, events=None, reservations=None,
                 seed: int = 0, heartbeat_s: float = 1.0, queue_depth: int = 64):
        self.fep_id = fep_id
        self.bus = bus
        self.clock = clock
        self.events = events
        self.reservations = reservations
        self.seed = seed
        self.heartbeat_s = heartbeat_s
        self.queue_depth = queue_depth
        self._lock = threading.RLock()
        self._devices: dict[str, DeviceModel] = {}
        self._last_published: dict[str, tuple] = {}
        self._shots: dict[str, dict[str, ShotDataRecord]] = {}
        self._fired_shots: set[str] = set()
        # stagger heartbeats across FEPs so one tick never carries them all
        from iccs.fep.devices import derive_seed

        self._heartbeat_acc = -(derive_seed(fep_id, "hb") % 1000) / 1000.0 * heartbeat_s
        self._frame_acc: dict[str, float] = {}
        self._host: ServiceHost | None = None
        self._build(points)

    def _build(self, points: list[PointSpec]) -> None:
        for spec in points:
            if spec.point_id in self._devices:
                raise DuplicatePointId(spec.point_id)
            self._devices[spec.point_id] = build_device(
                spec.point_id, spec.kind, spec.params, self.seed)
        # cameras reference motor axes on the same FEP by point id
        for device in self._devices.values():
            if isinstance(device, Camera):
                mx = self._motor_ref(device.params.get("motor_x"))
                my = self._motor_ref(device.params.get("motor_y"))
                device.attach_motors(mx, my)
                self._frame_acc[device.point_id] = 0.0

    def _motor_ref(self, point_id: str | None) -> StepperMotor | None:
        if not point_id:
            return None
        motor = self._devices.get(point_id)
        if not isinstance(motor, StepperMotor):
            raise UnknownPoint(f"camera coupling: {point_id} is not a motor here")
        return motor

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._host = self.bus.host(f"fep-node/{self.fep_id}", self.queue_depth)
        self._host.serve(f"fep/{self.fep_id}", json_handler(self._fep_op))
        for point_id in self._devices:
            self._host.serve(f"pt/{point_id}", self._point_handler(point_id))
        for camera_id in self._frame_acc:
            camera = self._devices[camera_id]
            self.bus.register_stream(f"video/{camera_id}", camera.frame_rate_hz,
                                     producer=self.fep_id)
        if self.events is not None:
            self.events.log(f"fep/{self.fep_id}", "device_status",
                            {"op": "boot", "points": len(self._devices)})
        with self._lock:
            for point_id in self._devices:
                self._publish_status(point_id, force=True)

    def stop(self) -> None:
        if self._host is not None:
            self._host.stop()
            self._host = None
        self.bus.deregister_node(f"fep-node/{self.fep_id}")

    def point_ids(self) -> list[str]:
        return sorted(self._devices)

    def device(self, point_id: str) -> DeviceModel:
        dev = self._devices.get(point_id)
        if dev is None:
            raise UnknownPoint(point_id)
        return dev

    # -- commands and status -------------------------------------------------

    def apply_command(self, point_id: str, op: str, args: dict | None = None,
                      holder: str | None = None) -> CommandAck:
        """Execute a device command; raises typed errors on rejection."""
        args = args or {}
        with self._lock:
            device = self.device(point_id)
            if self.reservations is not None:
                owner = self.reservations.holder_of(point_id)
                if owner is not None and owner != holder:
                    raise NotReservationHolder(
                        f"{point_id} reserved by {owner}")
            result = device.command(op, args, self.clock.now_ns())
            self._publish_status(point_id)
        if self.events is not None:
            self.events.log(f"pt/{point_id}", "device_status",
                            {"op": op, "holder": holder or "", "args": args})
        return CommandAck(True, "", result)

    def sample_status(self, point_id: str) -> StatusReading:
        with self._lock:
            device = self.device(point_id)
            return self._reading(device)

    def _reading(self, device: DeviceModel) -> StatusReading:
        now = self.clock.now_ns()
        return StatusReading(device.point_id, device.value(), device.health,
                             now, self.clock.iso(now))

    def _publish_status(self, point_id: str, force: bool = False) -> None:
        device = self._devices[point_id]
        extra = device.extra()
        value = device.value()
        key = (tuple(value) if isinstance(value, list) else value,
               device.health, tuple(sorted(extra.items())))
        if not force and self._last_published.get(point_id) == key:
            return
        self._last_published[point_id] = key
        reading = self._reading(device)
        body = reading.to_dict()
        body.update(extra)
        body["fep_id"] = self.fep_id
        body["detail"] = device.health_detail
        body["wall_ns"] = time.monotonic_ns()
        self.bus.publish(f"status/{point_id}",
                         json.dumps(body, sort_keys=True).encode(),
                         source=f"fep/{self.fep_id}")

    def inject_fault(self, point_id: str, reason: str) -> None:
        with self._lock:
            self.device(point_id).fault(reason)
            self._publish_status(point_id)
        if self.events is not None:
            self.events.log(f"pt/{point_id}", "error",
                            {"op": "fault", "reason": reason})

    def clear_fault(self, point_id: str) -> None:
        with self._lock:
            self.device(point_id).clear_fault()
            self._publish_status(point_id)

    def health(self) -> tuple[str, str]:
        """Worst device health and the offending point path."""
        worst, path = "ok", ""
        with self._lock:
            for point_id, device in self._devices.items():
                if _HEALTH_RANK[device.health] > _HEALTH_RANK[worst]:
                    worst, path = device.health, point_id
        return worst, path

    # -- simulation ----------------------------------------------------------

    def advance(self, dt_s: float) -> None:
        """Advance every device model to the current clock reading."""
        if dt_s <= 0:
            raise ValueError("advance requires dt > 0")
        with self._lock:
            now = self.clock.now_ns()
            heartbeat = False
            self._heartbeat_acc += dt_s
            if self._heartbeat_acc >= self.heartbeat_s:
                self._heartbeat_acc -= self.heartbeat_s
                heartbeat = True
            for point_id, device in self._devices.items():
                if isinstance(device, Photodiode):
                    if heartbeat:
                        device.advance(now)
                else:
                    device.advance(now)
            for camera_id, acc in list(self._frame_acc.items()):
                camera = self._devices[camera_id]
                period = 1.0 / camera.frame_rate_hz
                acc += dt_s
                frames = 0
                while acc >= period and frames < 100:
                    acc -= period
                    frames += 1
                self._frame_acc[camera_id] = acc
                # frame synthesis is the expensive part; skip it with no viewers
                if frames and self.bus.stream_consumers(f"video/{camera_id}"):
                    for _ in range(frames):
                        self.bus.stream_push(f"video/{camera_id}",
                                             encode_frame(camera.frame()))
            for point_id in self._devices:
                self._publish_status(point_id, force=heartbeat)

    # -- shots ----------------------------------------------------------------

    def arm_for_shot(self, shot_id: str, points: list[str]) -> list[str]:
        armed = []
        with self._lock:
            for point_id in points:
                device = self.device(point_id)
                device.arm(shot_id)
                armed.append(point_id)
        if self.events is not None and armed:
            self.events.log(f"fep/{self.fep_id}", "shot_phase",
                            {"op": "arm", "shot_id": shot_id,
                             "points": sorted(armed)})
        return armed

    def armed_points(self, shot_id: str) -> list[str]:
        with self._lock:
            return sorted(p for p, d in self._devices.items()
                          if d.armed_for == shot_id)

    def disarm_all(self, shot_id: str | None = None) -> list[str]:
        disarmed = []
        with self._lock:
            for point_id, device in self._devices.items():
                if device.armed_for is not None and (
                        shot_id is None or device.armed_for == shot_id):
                    device.disarm()
                    disarmed.append(point_id)
        return disarmed

    def trigger_shot(self, shot_id: str, fired_ps: dict[str, int] | None = None) -> int:
        """Capture one record per point armed for this shot."""
        fired_ps = fired_ps or {}
        captured = {}
        with self._lock:
            for point_id, device in self._devices.items():
                if device.armed_for != shot_id:
                    continue
                at_ps = int(fired_ps.get(point_id, 0))
                payload = device.capture(shot_id, at_ps)
                summary = device.summary() if hasattr(device, "summary") else {}
                captured[point_id] = ShotDataRecord(
                    shot_id, point_id, device.kind, payload, at_ps, summary)
                device.disarm()
            self._shots.setdefault(shot_id, {}).update(captured)
            self._fired_shots.add(shot_id)
        if self.events is not None:
            self.events.log(f"fep/{self.fep_id}", "shot_phase",
                            {"op": "trigger", "shot_id": shot_id,
                             "captured": sorted(captured)})
        return len(captured)

    def read_shot_data(self, shot_id: str) -> list[ShotDataRecord]:
        with self._lock:
            if shot_id not in self._fired_shots:
                raise ShotUnknown(f"{shot_id} not fired on {self.fep_id}")
            records = self._shots.get(shot_id, {})
            return [records[k] for k in sorted(records)]

    # -- bus handlers ----------------------------------------------------------

    def _fep_op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "arm":
            armed = self.arm_for_shot(args["shot_id"], args["points"])
            return {"armed": armed}
        if op == "disarm_all":
            return {"disarmed": self.disarm_all(args.get("shot_id"))}
        if op == "trigger":
            count = self.trigger_shot(args["shot_id"], args.get("fired_ps"))
            return {"captured": count}
        if op == "read_shot_data":
            records = self.read_shot_data(args["shot_id"])
            return {"records": [
                {"point_id": r.point_id, "kind": r.kind,
                 "acquired_ps": r.acquired_ps, "summary": r.summary,
                 "payload_b64": base64.b64encode(r.payload).decode()}
                for r in records]}
        if op == "armed_points":
            return {"points": self.armed_points(args["shot_id"])}
        if op == "health":
            worst, path = self.health()
            return {"health": worst, "path": path}
        if op == "point_ids":
            return {"points": self.point_ids()}
        raise ValueError(f"unknown fep op {op!r}")

    def _point_handler(self, point_id: str):
        def handler(payload: bytes) -> bytes:
            args = json.loads(payload.decode()) if payload else {}
            op = args.get("op")
            if op == "status":
                return json.dumps(
                    self.sample_status(point_id).to_dict()).encode()
            if op == "get_frame":
                with self._lock:
                    device = self.device(point_id)
                    if not isinstance(device, Camera):
                        raise KindMismatch(f"{point_id} is not a camera")
                    return encode_frame(device.frame())
            ack = self.apply_command(point_id, op, args.get("args"),
                                     args.get("holder"))
            return json.dumps({"accepted": ack.accepted, "reason": ack.reason,
                               "result": ack.result}).encode()

        return handler
