"""Operator gateway: HTTP access to the running facility for consoles.

Endpoints:
    GET  /status                 readiness rollup + countdown state
    GET  /alerts                 active alerts, severity-ordered
    GET  /shot                   countdown state + last shot result
    GET  /events                 server-push stream (SSE format) of
                                 tick/alert/phase/readiness/status frames
    GET  /video/<camera_id>      multipart PNG stream, 8-bit downsampled
    POST /command                device command; reservation enforced
    POST /alert                  acknowledge/clear an alert
    POST /reserve                acquire/release a reservation
    POST /shot/hold|resume|abort countdown control

Every operator POST lands in the event log as an operator_action record.
Command round-trip time (gateway-in to ack-out) feeds the metrics
collector.
"""

from __future__ import annotations

import io
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
from PIL import Image

from iccs.bus.core import BusError, DeadlineExceeded
from iccs.fep.devices import decode_frame
from iccs.harness.facility import Facility
from iccs.rpc import call_json

_EVENT_TOPICS = ("clock/tick", "shot/phase", "alert/*", "readiness/*")


class Gateway:
    """HTTP front door; owns a ThreadingHTTPServer on localhost."""

    def __init__(self, facility: Facility, host: str = "127.0.0.1",
                 port: int = 0, console_dir: Path | None = None):
        self.facility = facility
        self.console_dir = Path(console_dir) if console_dir else None
        handler = _make_handler(self)
        self.server = ThreadingHTTPServer((host, port), handler)
        self.server.daemon_threads = True
        self.address = self.server.server_address
        self._thread = threading.Thread(target=self.server.serve_forever,
                                        name="gateway", daemon=True)
        self._thread.start()

    @property
    def port(self) -> int:
        return self.address[1]

    @property
    def url(self) -> str:
        return f"http://{self.address[0]}:{self.address[1]}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()

    # -- request implementations (called from handler threads) ---------------

    def status(self) -> dict:
        rollup = self.facility.director.status_rollup()
        rollup["countdown"] = self.facility.director.countdown_state()
        rollup["alert_count"] = len(self.facility.services.alerts.active())
        rollup["mode"] = self.facility.mode
        return rollup

    def alerts(self) -> dict:
        return {"alerts": [a.to_dict()
                           for a in self.facility.services.alerts.active()]}

    def shot(self) -> dict:
        state = self.facility.director.countdown_state()
        result = self.facility.director.last_result
        if result is not None:
            state["last_result"] = {
                "shot_id": result.shot_id, "outcome": result.outcome,
                "abort_reason": result.abort_reason,
                "recovery": result.recovery}
        return state

    def command(self, body: dict) -> tuple[int, dict]:
        point_id = body.get("point_id", "")
        op = body.get("op", "")
        operator = body.get("operator", "operator")
        args = body.get("args") or {}
        t0 = time.monotonic()
        holder = self.facility.services.reservations.holder_of(point_id)
        if holder != operator:
            self._log_operator(operator, {"op": op, "point_id": point_id,
                                          "rejected": "NotReservationHolder"})
            return 403, {"ok": False, "error": "NotReservationHolder",
                         "reason": f"{point_id} is "
                                   + (f"held by {holder}" if holder else
                                      "not reserved by you")}
        try:
            reply = call_json(self.facility.bus, f"pt/{point_id}",
                              {"op": op, "args": args, "holder": operator},
                              deadline_s=2.0, source=f"op/{operator}")
            status, out = 200, {"ok": True, "result": reply}
        except Exception as exc:
            # rejections keep their origin type and reason, verbatim
            status, out = 409, {"ok": False,
                                "error": type(exc).__name__, "reason": str(exc)}
        self.facility.metrics.record(
            "command_rtt", (time.monotonic() - t0) * 1000.0)
        self._log_operator(operator, {"op": op, "point_id": point_id,
                                      "ok": out["ok"]})
        return status, out

    def alert_action(self, body: dict) -> tuple[int, dict]:
        operator = body.get("operator", "operator")
        try:
            state = self.facility.services.alerts.transition(
                body.get("alert_id", ""), body.get("action", ""), operator)
            self._log_operator(operator, {"op": "alert_" + body.get("action", ""),
                                          "alert_id": body.get("alert_id")})
            return 200, {"ok": True, "state": state}
        except Exception as exc:
            return 409, {"ok": False, "error": type(exc).__name__,
                         "reason": str(exc)}

    def reserve(self, body: dict) -> tuple[int, dict]:
        action = body.get("action", "acquire")
        resource = body.get("resource", "")
        holder = body.get("holder", "operator")
        reservations = self.facility.services.reservations
        try:
            if action == "acquire":
                reservations.reserve(resource, holder, body.get("lease_s"))
            elif action == "release":
                reservations.release(resource, holder)
            else:
                return 400, {"ok": False, "error": "BadAction",
                             "reason": f"unknown action {action!r}"}
            return 200, {"ok": True, "resource": resource, "holder": holder}
        except Exception as exc:
            return 409, {"ok": False, "error": type(exc).__name__,
                         "reason": str(exc)}

    def shot_control(self, op: str, body: dict) -> tuple[int, dict]:
        operator = body.get("operator", "operator")
        try:
            out = call_json(self.facility.bus, "sup/shot_director",
                            {"op": op, "reason": body.get("reason", "")},
                            deadline_s=2.0, source=f"op/{operator}")
            self._log_operator(operator, {"op": op, "target": "shot"})
            return 200, {"ok": True, "state": out}
        except Exception as exc:
            return 409, {"ok": False, "error": type(exc).__name__,
                         "reason": str(exc)}

    def _log_operator(self, operator: str, payload: dict) -> None:
        try:
            self.facility.services.events.log(f"op/{operator}",
                                              "operator_action", payload)
        except Exception:
            pass


def _make_handler(gateway: Gateway):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass  # no stderr chatter from per-request logging

        # -- helpers -------------------------------------------------------

        def _json(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(data)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if not length:
                return {}
            try:
                return json.loads(self.rfile.read(length).decode())
            except ValueError:
                return {}

        # -- GET -------------------------------------------------------------

        def do_GET(self):
            path = self.path.split("?")[0]
            if path == "/status":
                self._json(200, gateway.status())
            elif path == "/alerts":
                self._json(200, gateway.alerts())
            elif path == "/shot":
                self._json(200, gateway.shot())
            elif path == "/events":
                self._stream_events()
            elif path.startswith("/video/"):
                self._stream_video(path.removeprefix("/video/"))
            elif gateway.console_dir is not None:
                self._static(path)
            else:
                self._json(404, {"ok": False, "error": "NotFound",
                                 "reason": path})

        def do_POST(self):
            path = self.path.split("?")[0]
            body = self._read_body()
            if path == "/command":
                status, out = gateway.command(body)
            elif path == "/alert":
                status, out = gateway.alert_action(body)
            elif path == "/reserve":
                status, out = gateway.reserve(body)
            elif path in ("/shot/hold", "/shot/resume", "/shot/abort"):
                status, out = gateway.shot_control(path.rsplit("/", 1)[1], body)
            else:
                status, out = 404, {"ok": False, "error": "NotFound",
                                    "reason": path}
            self._json(status, out)

        # -- streams ------------------------------------------------------------

        def _stream_events(self):
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            bus = gateway.facility.bus
            subs = [bus.subscribe(topic) for topic in _EVENT_TOPICS]
            kinds = {"clock/tick": "tick", "shot/phase": "phase"}
            last_keepalive = time.monotonic()
            try:
                while True:
                    sent = False
                    for sub in subs:
                        while sub.pending():
                            env = sub.get(0.01)
                            kind = kinds.get(env.topic_or_target)
                            if kind is None:
                                kind = env.topic_or_target.split("/")[0]
                            frame = (f"event: {kind}\n"
                                     f"data: {env.payload.decode()}\n\n")
                            self.wfile.write(frame.encode())
                            sent = True
                    if sent:
                        self.wfile.flush()
                    else:
                        time.sleep(0.02)
                        if time.monotonic() - last_keepalive > 2.0:
                            last_keepalive = time.monotonic()
                            self.wfile.write(b": keepalive\n\n")
                            self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                for sub in subs:
                    bus.unsubscribe(sub)

        def _stream_video(self, camera_id: str):
            bus = gateway.facility.bus
            try:
                handle = bus.open_stream(f"video/{camera_id}")
            except BusError:
                self._json(404, {"ok": False, "error": "StreamNotFound",
                                 "reason": camera_id})
                return
            boundary = "frame"
            self.send_response(200)
            self.send_header("Content-Type",
                             f"multipart/x-mixed-replace; boundary={boundary}")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            try:
                while True:
                    try:
                        _seq, payload = handle.get(timeout=2.0)
                    except DeadlineExceeded:
                        continue
                    png = _to_png(payload)
                    part = (f"--{boundary}\r\n"
                            f"Content-Type: image/png\r\n"
                            f"Content-Length: {len(png)}\r\n\r\n").encode()
                    self.wfile.write(part + png + b"\r\n")
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                handle.close()

        def _static(self, path: str):
            if path in ("/", ""):
                path = "/index.html"
            root = gateway.console_dir.resolve()
            target = (root / path.lstrip("/")).resolve()
            if not str(target).startswith(str(root)) or not target.is_file():
                self._json(404, {"ok": False, "error": "NotFound",
                                 "reason": path})
                return
            types = {".html": "text/html", ".js": "text/javascript",
                     ".css": "text/css", ".map": "application/json"}
            data = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type",
                             types.get(target.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler


def _to_png(frame_payload: bytes) -> bytes:
    """Camera wire frame (16-bit) to an 8-bit PNG for browser display."""
    pixels = decode_frame(frame_payload)
    peak = int(pixels.max()) or 1
    scaled = (pixels.astype(np.float32) * (255.0 / peak)).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(scaled, mode="L").save(buffer, format="PNG")
    return buffer.getvalue()
