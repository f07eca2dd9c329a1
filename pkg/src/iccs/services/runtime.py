"""Wires the framework services onto the bus as request targets.

Targets: svc/alerts, svc/events, svc/reservations, svc/archive. All carry
JSON payloads; archive payload bytes travel base64-encoded.
"""

from __future__ import annotations

import base64
from pathlib import Path

from iccs.bus.core import Bus
from iccs.clock import Clock
from iccs.rpc import json_handler
from iccs.services.alerts import AlertService
from iccs.services.archive import ArchiveService
from iccs.services.events import EventLog
from iccs.services.reservations import ReservationService


class FrameworkServices:
    """Alert, event, reservation, and archive services as one bus node."""

    def __init__(self, bus: Bus, clock: Clock, run_dir: Path | None = None,
                 alert_queue_depth: int = 10_000):
        self.bus = bus
        self.clock = clock
        self.run_dir = Path(run_dir) if run_dir is not None else None
        events_path = self.run_dir / "events.log" if self.run_dir else None
        archive_root = self.run_dir / "archive" if self.run_dir else None
        self.events = EventLog(clock, events_path,
                               on_storage_failure=self._on_storage_failure)
        self.alerts = AlertService(clock, self.events, publish=bus.publish,
                                   max_active=alert_queue_depth)
        self.reservations = ReservationService(clock, self.events)
        self.archive = ArchiveService(clock, archive_root)
        self._host = None

    def _on_storage_failure(self, detail: str) -> None:
        self.alerts.raise_alert("svc/events", "critical",
                                f"event log storage failure: {detail}")

    def start(self) -> None:
        self._host = self.bus.host("svc-node", queue_depth=256)
        self._host.serve("svc/alerts", json_handler(self._alerts_op))
        self._host.serve("svc/events", json_handler(self._events_op))
        self._host.serve("svc/reservations", json_handler(self._reservations_op))
        self._host.serve("svc/archive", json_handler(self._archive_op))

    def stop(self) -> None:
        if self._host is not None:
            self._host.stop()
            self._host = None
        self.events.close()

    # -- request dispatch ------------------------------------------------

    def _alerts_op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "raise":
            alert_id = self.alerts.raise_alert(
                args.get("source", ""), args.get("severity", "info"),
                args.get("text", ""))
            return {"alert_id": alert_id}
        if op == "transition":
            state = self.alerts.transition(
                args["alert_id"], args["action"], args.get("actor", ""))
            return {"state": state}
        if op == "active":
            return {"alerts": [a.to_dict() for a in self.alerts.active()]}
        if op == "get":
            return self.alerts.get(args["alert_id"]).to_dict()
        raise ValueError(f"unknown alerts op {op!r}")

    def _events_op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "log":
            seq = self.events.log(args.get("source", ""),
                                  args.get("category", "device_status"),
                                  args.get("payload", {}))
            return {"seq": seq}
        if op == "query":
            records = self.events.query(
                args.get("start_ns"), args.get("end_ns"),
                args.get("source"), args.get("category"))
            return {"events": [
                {"seq": r.seq, "time": r.time_iso, "source": r.source,
                 "category": r.category, "payload": r.payload}
                for r in records]}
        raise ValueError(f"unknown events op {op!r}")

    def _reservations_op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "reserve":
            r = self.reservations.reserve(
                args["resource"], args["holder"], args.get("lease_s"))
            return {"ok": True, "resource": r.resource, "holder": r.holder}
        if op == "release":
            self.reservations.release(args["resource"], args["holder"])
            return {"ok": True}
        if op == "holder":
            return {"holder": self.reservations.holder_of(args["resource"])}
        raise ValueError(f"unknown reservations op {op!r}")

    def _archive_op(self, args: dict) -> dict:
        op = args.get("op")
        if op == "store":
            payload = base64.b64decode(args["payload_b64"])
            record = self.archive.store(args["shot_id"], args["source"],
                                        payload, args.get("overwrite", False))
            return {"ok": True, "crc32": f"{record.crc32:08x}"}
        if op == "fetch":
            records = self.archive.fetch(args["shot_id"])
            return {"records": [
                {"source": r.source, "crc_ok": r.crc_ok,
                 "payload_b64": base64.b64encode(r.payload).decode()}
                for r in records]}
        if op == "sources":
            return {"sources": self.archive.sources(args["shot_id"])}
        raise ValueError(f"unknown archive op {op!r}")
