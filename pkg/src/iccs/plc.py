"""Industrial-controls segment: interlock permissives, latched trips, and
slow process channels with first-order dynamics.

Permissive chains are conjunctions of input literals. An input that
transitions away from its safe value during a scan latches a trip; a
latched input reads false to every chain until an explicit reset finds its
field value safe again. The segment scans synchronously on a fixed period,
classic PLC style.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field

from iccs.bus.core import Bus
from iccs.clock import Clock
from iccs.rpc import json_handler, register_errors

SLOW_CHANNEL_KINDS = ("vacuum_pressure", "argon_flow", "air_temp")


class UnknownAction(Exception):
    pass


class UnknownInput(Exception):
    pass


class UnknownChannel(Exception):
    pass


class SetpointOutOfBounds(Exception):
    pass


register_errors(UnknownAction, UnknownInput, UnknownChannel, SetpointOutOfBounds)


@dataclass
class InterlockInput:
    input_id: str
    value: bool = True
    safe_value: bool = True
    latched_trip: bool = False

    def effective(self) -> bool:
        # A latched trip reads false regardless of the field state.
        return False if self.latched_trip else self.value


@dataclass(frozen=True)
class ChainTerm:
    input_id: str
    required: bool


@dataclass(frozen=True)
class PermissiveChain:
    action_id: str
    terms: tuple[ChainTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError(f"{self.action_id}: permissive chain needs terms")


@dataclass(frozen=True)
class Decision:
    allow: bool
    failing: tuple[str, ...]  # every failing literal, as "input=required"

    def to_dict(self) -> dict:
        return {"allow": self.allow, "failing": list(self.failing)}


class SlowChannel:
    """First-order process channel: value relaxes toward the setpoint."""

    def __init__(self, channel_id: str, kind: str, value: float,
                 setpoint: float, time_constant_s: float,
                 bounds: tuple[float, float], units: str = ""):
        if kind not in SLOW_CHANNEL_KINDS:
            raise ValueError(f"{channel_id}: unknown slow-channel kind {kind!r}")
        if time_constant_s <= 0:
            raise ValueError(f"{channel_id}: time constant must be > 0")
        self.channel_id = channel_id
        self.kind = kind
        self.value = float(value)
        self.setpoint = float(setpoint)
        self.time_constant_s = float(time_constant_s)
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.units = units

    def set_setpoint(self, setpoint: float) -> float:
        lo, hi = self.bounds
        if not (lo <= setpoint <= hi):
            raise SetpointOutOfBounds(
                f"{self.channel_id}: {setpoint} outside [{lo}, {hi}]")
        self.setpoint = float(setpoint)
        return self.setpoint

    def advance(self, dt_s: float) -> float:
        decay = math.exp(-dt_s / self.time_constant_s)
        self.value = self.setpoint + (self.value - self.setpoint) * decay
        lo, hi = self.bounds
        self.value = min(max(self.value, lo), hi)
        return self.value


class PlcSegment:
    """Scan-based interlock and slow-control segment; a bus peer of FEPs."""

    def __init__(self, bus: Bus | None, clock: Clock,
                 inputs: list[InterlockInput],
                 chains: list[PermissiveChain],
                 channels: list[SlowChannel] | None = None,
                 *, events=None, scan_period_s: float = 0.1,
                 segment_id: str = "plc"):
        self.bus = bus
        self.clock = clock
        self.events = events
        self.scan_period_s = scan_period_s
        self.segment_id = segment_id
        self._lock = threading.RLock()
        self._inputs = {i.input_id: i for i in inputs}
        self._chains = {c.action_id: c for c in chains}
        self._channels = {c.channel_id: c for c in (channels or [])}
        for chain in chains:
            for term in chain.terms:
                if term.input_id not in self._inputs:
                    raise UnknownInput(f"{chain.action_id} references {term.input_id}")
        self._pending_fields: dict[str, bool] = {}
        self._scan_acc = 0.0
        self.scan_count = 0
        self._last_readiness: tuple | None = None
        self._host = None

    # -- configuration views -------------------------------------------------

    def input_ids(self) -> list[str]:
        return sorted(self._inputs)

    def action_ids(self) -> list[str]:
        return sorted(self._chains)

    def channel_ids(self) -> list[str]:
        return sorted(self._channels)

    def point_count(self) -> int:
        return len(self._inputs) + len(self._channels)

    # -- interlock evaluation --------------------------------------------------

    def evaluate_permissive(self, action_id: str,
                            inputs: dict[str, bool] | None = None) -> Decision:
        """Conjunction over the chain's literals; lists every failing term."""
        with self._lock:
            chain = self._chains.get(action_id)
            if chain is None:
                raise UnknownAction(action_id)
            failing = []
            for term in chain.terms:
                inp = self._inputs.get(term.input_id)
                if inp is None:
                    raise UnknownInput(term.input_id)
                actual = (inputs[term.input_id] if inputs is not None
                          and term.input_id in inputs else inp.effective())
                if actual != term.required:
                    failing.append(f"{term.input_id}={term.required}")
            return Decision(not failing, tuple(failing))

    def set_field_input(self, input_id: str, value: bool) -> None:
        """Stage a field transition; it takes effect at the next scan."""
        with self._lock:
            if input_id not in self._inputs:
                raise UnknownInput(input_id)
            self._pending_fields[input_id] = bool(value)

    def scan_cycle(self, field_inputs: dict[str, bool] | None = None) -> dict[str, Decision]:
        """Apply field values, latch unsafe transitions, evaluate all chains."""
        with self._lock:
            staged = dict(self._pending_fields)
            self._pending_fields.clear()
            if field_inputs:
                staged.update(field_inputs)
            for input_id, value in staged.items():
                inp = self._inputs.get(input_id)
                if inp is None:
                    raise UnknownInput(input_id)
                was_safe = inp.value == inp.safe_value
                inp.value = bool(value)
                if was_safe and inp.value != inp.safe_value:
                    inp.latched_trip = True
            outputs = {action: self.evaluate_permissive(action)
                       for action in self._chains}
            self.scan_count += 1
            self._publish_scan(outputs)
            return outputs

    def reset_trips(self, actor: str) -> list[str]:
        """Clear trips whose field inputs are safe again; report what cleared."""
        cleared = []
        with self._lock:
            for inp in self._inputs.values():
                if inp.latched_trip and inp.value == inp.safe_value:
                    inp.latched_trip = False
                    cleared.append(inp.input_id)
        if self.events is not None and cleared:
            self.events.log(actor or "(unknown)", "operator_action",
                            {"op": "reset_trips", "cleared": sorted(cleared)})
        return sorted(cleared)

    def tripped(self) -> list[str]:
        with self._lock:
            return sorted(i.input_id for i in self._inputs.values()
                          if i.latched_trip)

    # -- slow channels -----------------------------------------------------------

    def command_slow_control(self, channel_id: str, setpoint: float) -> float:
        with self._lock:
            channel = self._channels.get(channel_id)
            if channel is None:
                raise UnknownChannel(channel_id)
            accepted = channel.set_setpoint(setpoint)
        if self.events is not None:
            self.events.log(f"plc/{channel_id}", "device_status",
                            {"op": "setpoint", "value": accepted})
        return accepted

    def channel(self, channel_id: str) -> SlowChannel:
        with self._lock:
            channel = self._channels.get(channel_id)
        if channel is None:
            raise UnknownChannel(channel_id)
        return channel

    # -- simulation -----------------------------------------------------------

    def advance(self, dt_s: float) -> None:
        if dt_s <= 0:
            raise ValueError("advance requires dt > 0")
        with self._lock:
            for channel in self._channels.values():
                channel.advance(dt_s)
            self._scan_acc += dt_s
            while self._scan_acc >= self.scan_period_s:
                self._scan_acc -= self.scan_period_s
                self.scan_cycle()

    def _publish_scan(self, outputs: dict[str, Decision]) -> None:
        if self.bus is None:
            return
        now = self.clock.now_ns()
        tripped = [i.input_id for i in self._inputs.values() if i.latched_trip]
        body = {
            "segment": self.segment_id,
            "scan": self.scan_count,
            "ts_ns": now,
            "tripped": sorted(tripped),
            "denied": sorted(a for a, d in outputs.items() if not d.allow),
            "wall_ns": time.monotonic_ns(),
        }
        self.bus.publish(f"plc/{self.segment_id}/scan",
                         json.dumps(body, sort_keys=True).encode(),
                         source=f"plc/{self.segment_id}")
        health = "warning" if tripped else "ok"
        detail = ",".join(sorted(tripped))
        if self._last_readiness == (health, detail):
            return
        self._last_readiness = (health, detail)
        self.bus.publish(f"readiness/{self.segment_id}", json.dumps({
            "name": self.segment_id, "health": health, "detail": detail,
            "ts_ns": now, "wall_ns": time.monotonic_ns()},
            sort_keys=True).encode(),
            source=f"plc/{self.segment_id}")

    # -- bus surface ---------------------------------------------------------

    def start(self) -> None:
        if self.bus is None:
            return
        self._host = self.bus.host(f"plc-node/{self.segment_id}")
        self._host.serve("plc/segment", json_handler(self._segment_op))

    def stop(self) -> None:
        if self._host is not None:
            self._host.stop()
            self._host = None

    def _segment_op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "evaluate":
            return self.evaluate_permissive(args["action_id"]).to_dict()
        if op == "set_input":
            self.set_field_input(args["input_id"], bool(args["value"]))
            return {"ok": True}
        if op == "scan":
            outputs = self.scan_cycle(args.get("field_inputs"))
            return {a: d.to_dict() for a, d in outputs.items()}
        if op == "reset_trips":
            return {"cleared": self.reset_trips(args.get("actor", ""))}
        if op == "setpoint":
            value = self.command_slow_control(args["channel_id"], args["setpoint"])
            return {"setpoint": value}
        if op == "channel":
            ch = self.channel(args["channel_id"])
            return {"value": ch.value, "setpoint": ch.setpoint, "units": ch.units}
        if op == "tripped":
            return {"tripped": self.tripped()}
        raise ValueError(f"unknown plc op {op!r}")
