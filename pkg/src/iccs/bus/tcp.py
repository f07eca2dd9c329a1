"""TCP transport for the bus: 4-byte big-endian length prefix per envelope.

`BusServer` exposes an in-process `Bus` to socket peers; `TcpBusClient`
offers the same API surface as `Bus` from the far side. Control operations
(naming, subscriptions, streams) ride ordinary request envelopes addressed
to reserved `__bus/...` targets with JSON payloads; application payloads
stay opaque.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from typing import Callable

from iccs.bus.core import (
    Bus,
    BusError,
    DeadlineExceeded,
    Endpoint,
    MalformedName,
    MalformedTopic,
    NameNotFound,
    RemoteLink,
    RequestFailed,
    StaleIncarnation,
    StreamHandle,
    StreamNotFound,
    Subscription,
    TargetUnavailable,
    _Pending,
)
from iccs.bus.envelope import FLAG_ERROR, Envelope, EnvelopeError, Kind, decode

_LEN = struct.Struct(">I")
_CONTROL_DEADLINE_S = 5.0

_ERROR_CLASSES = {
    cls.__name__: cls
    for cls in (MalformedName, MalformedTopic, StaleIncarnation, NameNotFound,
                DeadlineExceeded, TargetUnavailable, StreamNotFound,
                RequestFailed, BusError)
}


class PortUnavailable(BusError):
    """The requested listen address is already bound."""


def _send_frame(sock: socket.socket, lock: threading.Lock, env: Envelope) -> None:
    data = env.encode()
    with lock:
        sock.sendall(_LEN.pack(len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed")
        buf.extend(chunk)
    return bytes(buf)


def _error_reply(env: Envelope, exc: Exception, now_ns: int) -> Envelope:
    payload = json.dumps(
        {"error": type(exc).__name__, "detail": str(exc)}).encode()
    return Envelope(
        kind=Kind.REPLY,
        correlation_id=env.correlation_id,
        topic_or_target=env.topic_or_target,
        payload=payload,
        sent_at_ns=now_ns,
        source="__bus",
        flags=FLAG_ERROR,
    )


def _raise_error_payload(payload: bytes) -> None:
    try:
        info = json.loads(payload.decode())
        cls = _ERROR_CLASSES.get(info.get("error", ""), RequestFailed)
        detail = info.get("detail", "")
    except (ValueError, AttributeError):
        cls, detail = RequestFailed, payload.decode("utf-8", "replace")
    raise cls(detail)


class _ConnLink(RemoteLink):
    """Server-side handle for one connected peer."""

    def __init__(self, server: "BusServer", sock: socket.socket, peer: str):
        self.server = server
        self.sock = sock
        self.peer = peer
        self.write_lock = threading.Lock()
        self.node_ids: set[str] = set()
        self.subs: list[Subscription] = []
        self.stream_pumps: list[StreamHandle] = []
        self.outstanding: dict[int, _Pending] = {}
        self.out_lock = threading.Lock()
        self.closed = False

    def send(self, env: Envelope) -> None:
        try:
            _send_frame(self.sock, self.write_lock, env)
        except OSError:
            self.server._drop_link(self)

    def send_event(self, sub_id: int, env: Envelope) -> None:
        # Subscription id travels in correlation_id on event envelopes.
        self.send(Envelope(
            kind=Kind.EVENT,
            correlation_id=sub_id,
            topic_or_target=env.topic_or_target,
            payload=env.payload,
            sent_at_ns=env.sent_at_ns,
            source=env.source,
        ))

    def send_request(self, env: Envelope, pending: _Pending) -> None:
        with self.out_lock:
            if self.closed:
                pending.fail(TargetUnavailable(f"peer {self.peer} disconnected"))
                return
            self.outstanding[env.correlation_id] = pending
        self.send(env)

    def complete(self, reply: Envelope) -> None:
        with self.out_lock:
            pending = self.outstanding.pop(reply.correlation_id, None)
        if pending is not None:
            pending.complete(reply)

    def close(self) -> None:
        with self.out_lock:
            self.closed = True
            outstanding = list(self.outstanding.values())
            self.outstanding.clear()
        for p in outstanding:
            p.fail(TargetUnavailable(f"peer {self.peer} disconnected"))
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class BusServer:
    """Accepts socket peers and bridges them onto an in-process Bus."""

    def __init__(self, bus: Bus, host: str = "127.0.0.1", port: int = 0):
        self.bus = bus
        try:
            self._listener = socket.create_server((host, port))
        except OSError as exc:
            raise PortUnavailable(f"{host}:{port}: {exc}") from exc
        self.address = self._listener.getsockname()
        self._links: list[_ConnLink] = []
        self._lock = threading.Lock()
        self._stopped = False
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="bus-server-accept", daemon=True)
        self._accept_thread.start()

    @property
    def port(self) -> int:
        return self.address[1]

    def _accept_loop(self) -> None:
        while not self._stopped:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            link = _ConnLink(self, sock, f"{addr[0]}:{addr[1]}")
            with self._lock:
                self._links.append(link)
            threading.Thread(
                target=self._reader_loop, args=(link,),
                name=f"bus-conn:{link.peer}", daemon=True).start()

    def _reader_loop(self, link: _ConnLink) -> None:
        try:
            while True:
                (length,) = _LEN.unpack(_recv_exact(link.sock, 4))
                env = decode(_recv_exact(link.sock, length))
                self._dispatch(link, env)
        except (ConnectionError, OSError, EnvelopeError):
            self._drop_link(link)

    def _dispatch(self, link: _ConnLink, env: Envelope) -> None:
        if env.kind == Kind.REPLY:
            link.complete(env)
        elif env.kind == Kind.EVENT:
            try:
                self.bus.publish(env.topic_or_target, env.payload, source=env.source)
            except MalformedTopic:
                pass  # nothing to report back to a fire-and-forget publisher
        elif env.kind == Kind.STREAM_FRAME:
            try:
                self.bus.stream_push(env.topic_or_target, env.payload)
            except StreamNotFound:
                pass
        elif env.kind == Kind.REQUEST:
            if env.topic_or_target.startswith("__bus/"):
                self._control(link, env)
            else:
                self._route_request(link, env)

    def _route_request(self, origin: _ConnLink, env: Envelope) -> None:
        now = self.bus.clock.now_ns()
        try:
            endpoint = self.bus.resolve_name(env.topic_or_target)
            with self.bus._lock:
                host = self.bus._hosts.get(endpoint.node_id)
                remote = self.bus._remotes.get(endpoint.node_id)
            pending = _Pending()
            pending.on_done = lambda p: origin.send(
                p.reply if p.reply is not None
                else _error_reply(env, p.error, self.bus.clock.now_ns()))
            if host is not None:
                host._enqueue(env.topic_or_target, env, pending)
            elif remote is not None:
                remote.send_request(env, pending)
            else:
                raise TargetUnavailable(
                    f"{env.topic_or_target}: node {endpoint.node_id} not attached")
        except BusError as exc:
            origin.send(_error_reply(env, exc, now))

    def _control(self, link: _ConnLink, env: Envelope) -> None:
        op = env.topic_or_target.removeprefix("__bus/")
        now = self.bus.clock.now_ns()
        try:
            args = json.loads(env.payload.decode()) if env.payload else {}
            result = self._control_op(link, op, args)
            link.send(Envelope(
                kind=Kind.REPLY, correlation_id=env.correlation_id,
                topic_or_target=env.topic_or_target,
                payload=json.dumps(result).encode(),
                sent_at_ns=now, source="__bus"))
        except Exception as exc:
            link.send(_error_reply(env, exc, now))

    def _control_op(self, link: _ConnLink, op: str, args: dict) -> dict:
        if op == "hello":
            node_id = args["node_id"]
            link.node_ids.add(node_id)
            return {"ok": True, "incarnation": self.bus.next_incarnation(node_id)}
        if op == "register":
            endpoint = Endpoint(args["node_id"], args["address"], args["incarnation"])
            record = self.bus.register_name(args["name"], endpoint)
            self.bus.attach_remote(endpoint.node_id, link)
            link.node_ids.add(endpoint.node_id)
            return {"ok": True, "registered_at": record.registered_at}
        if op == "resolve":
            ep = self.bus.resolve_name(args["name"])
            return {"node_id": ep.node_id, "address": ep.address,
                    "incarnation": ep.incarnation}
        if op == "deregister":
            self.bus.deregister_name(args["name"])
            return {"ok": True}
        if op == "subscribe":
            sub_id = args["sub_id"]
            sub = self.bus.subscribe(
                args["pattern"],
                callback=lambda e, _sid=sub_id: link.send_event(_sid, e),
                subscriber=Endpoint(args.get("node_id", link.peer),
                                    f"tcp/{link.peer}", 1))
            with self._lock:
                link.subs.append(sub)
            return {"ok": True}
        if op == "stream_register":
            self.bus.register_stream(args["stream_id"], args["rate_hz"],
                                     producer=args.get("node_id", link.peer))
            return {"ok": True}
        if op == "stream_open":
            handle = self.bus.open_stream(args["stream_id"])
            open_id = args["open_id"]
            with self._lock:
                link.stream_pumps.append(handle)
            threading.Thread(
                target=self._pump_stream,
                args=(link, args["stream_id"], open_id, handle),
                name=f"stream-pump:{args['stream_id']}", daemon=True).start()
            return {"ok": True, "rate_hz": self.bus.stream_rate(args["stream_id"])}
        raise BusError(f"unknown control op {op!r}")

    def _pump_stream(self, link: _ConnLink, stream_id: str, open_id: int,
                     handle: StreamHandle) -> None:
        while not link.closed and not handle.closed:
            try:
                seq, payload = handle.get(timeout=0.5)
            except DeadlineExceeded:
                continue
            except BusError:
                return
            link.send(Envelope(
                kind=Kind.STREAM_FRAME, correlation_id=open_id,
                topic_or_target=stream_id, payload=payload,
                sent_at_ns=self.bus.clock.now_ns(), stream_seq=seq))

    def _drop_link(self, link: _ConnLink) -> None:
        with self._lock:
            if link not in self._links:
                return
            self._links.remove(link)
        link.close()
        for sub in link.subs:
            self.bus.unsubscribe(sub)
        for handle in link.stream_pumps:
            handle.close()
        for node_id in link.node_ids:
            self.bus.deregister_node(node_id)

    def close(self) -> None:
        self._stopped = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            links = list(self._links)
            self._links.clear()
        for link in links:
            link.close()


class _ClientWorker:
    """Client-side serialized handler context, mirroring ServiceHost."""

    def __init__(self, client: "TcpBusClient", queue_depth: int = 64):
        self.client = client
        self.queue_depth = queue_depth
        self._items: list[Envelope] = []
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(
            target=self._run, name=f"tcp-worker:{client.node_id}", daemon=True)
        self._thread.start()

    def enqueue(self, env: Envelope) -> bool:
        with self._cond:
            if self._stopped or len(self._items) >= self.queue_depth:
                return False
            self._items.append(env)
            self._cond.notify()
            return True

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._items and not self._stopped:
                    self._cond.wait()
                if self._stopped:
                    return
                env = self._items.pop(0)
            try:
                self.client._handle_request(env)
            except Exception:
                pass  # connection gone; a late reply has nowhere to go

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify_all()


class TcpBusClient:
    """Far side of the bus: connects to a BusServer and mirrors the Bus API."""

    def __init__(self, node_id: str, host: str = "127.0.0.1", port: int = 0):
        self.node_id = node_id
        self._sock = socket.create_connection((host, port), timeout=10.0)
        self._sock.settimeout(None)
        self._write_lock = threading.Lock()
        self._lock = threading.Lock()
        self._pending: dict[int, _Pending] = {}
        self._subs: dict[int, Subscription] = {}
        self._streams: dict[int, StreamHandle] = {}
        self._handlers: dict[str, Callable[[bytes], bytes]] = {}
        self._next_id = 1
        self._closed = False
        self._worker = _ClientWorker(self)
        self._reader = threading.Thread(
            target=self._reader_loop, name=f"tcp-client:{node_id}", daemon=True)
        self._reader.start()
        hello = self._control("hello", {"node_id": node_id})
        self.incarnation = hello["incarnation"]
        self.address = f"tcp/{self._sock.getsockname()[0]}:{self._sock.getsockname()[1]}"

    # -- plumbing ------------------------------------------------------------

    def _next(self) -> int:
        with self._lock:
            value = self._next_id
            self._next_id += 1
            return value

    def _send(self, env: Envelope) -> None:
        if self._closed:
            raise TargetUnavailable("client closed")
        _send_frame(self._sock, self._write_lock, env)

    def _reader_loop(self) -> None:
        try:
            while True:
                (length,) = _LEN.unpack(_recv_exact(self._sock, 4))
                env = decode(_recv_exact(self._sock, length))
                self._dispatch(env)
        except (ConnectionError, OSError, EnvelopeError):
            self._fail_all(TargetUnavailable("connection lost"))

    def _dispatch(self, env: Envelope) -> None:
        if env.kind == Kind.REPLY:
            with self._lock:
                pending = self._pending.pop(env.correlation_id, None)
            if pending is not None:
                pending.complete(env)
        elif env.kind == Kind.EVENT:
            with self._lock:
                sub = self._subs.get(env.correlation_id)
            if sub is not None:
                sub._deliver(env)
        elif env.kind == Kind.STREAM_FRAME:
            with self._lock:
                handle = self._streams.get(env.correlation_id)
            if handle is not None:
                handle._push(env.stream_seq, env.payload, env.sent_at_ns)
        elif env.kind == Kind.REQUEST:
            if not self._worker.enqueue(env):
                self._send(_error_reply(
                    env, TargetUnavailable("client queue full"), 0))

    def _handle_request(self, env: Envelope) -> None:
        handler = self._handlers.get(env.topic_or_target)
        if handler is None:
            self._send(_error_reply(
                env, TargetUnavailable(f"{env.topic_or_target} not served here"), 0))
            return
        try:
            payload = handler(env.payload)
        except Exception as exc:
            self._send(_error_reply(env, RequestFailed(f"{type(exc).__name__}: {exc}"), 0))
            return
        self._send(Envelope(
            kind=Kind.REPLY, correlation_id=env.correlation_id,
            topic_or_target=env.topic_or_target,
            payload=payload if payload is not None else b"",
            source=self.node_id))

    def _roundtrip(self, env: Envelope, deadline_s: float) -> Envelope:
        pending = _Pending()
        with self._lock:
            self._pending[env.correlation_id] = pending
        self._send(env)
        if not pending.event.wait(deadline_s):
            with self._lock:
                self._pending.pop(env.correlation_id, None)
            raise DeadlineExceeded(
                f"{env.topic_or_target} did not reply in {deadline_s}s")
        if pending.error is not None:
            raise pending.error
        reply = pending.reply
        assert reply is not None
        if reply.is_error:
            _raise_error_payload(reply.payload)
        return reply

    def _control(self, op: str, args: dict) -> dict:
        reply = self._roundtrip(Envelope(
            kind=Kind.REQUEST, correlation_id=self._next(),
            topic_or_target=f"__bus/{op}",
            payload=json.dumps(args).encode(), source=self.node_id),
            _CONTROL_DEADLINE_S)
        return json.loads(reply.payload.decode())

    def _fail_all(self, error: BusError) -> None:
        with self._lock:
            pending = list(self._pending.values())
            self._pending.clear()
            self._closed = True
        for p in pending:
            p.fail(error)

    # -- Bus API -------------------------------------------------------------

    def register_name(self, name: str, endpoint: Endpoint | None = None) -> dict:
        if endpoint is None:
            endpoint = Endpoint(self.node_id, self.address, self.incarnation)
        return self._control("register", {
            "name": name, "node_id": endpoint.node_id,
            "address": endpoint.address, "incarnation": endpoint.incarnation})

    def resolve_name(self, name: str) -> Endpoint:
        info = self._control("resolve", {"name": name})
        return Endpoint(info["node_id"], info["address"], info["incarnation"])

    def deregister_name(self, name: str) -> None:
        self._control("deregister", {"name": name})

    def serve(self, name: str, handler: Callable[[bytes], bytes]) -> None:
        self.register_name(name)
        with self._lock:
            self._handlers[name] = handler

    def request(self, target: str, payload: bytes, deadline_s: float,
                source: str | None = None) -> bytes:
        if deadline_s <= 0:
            raise ValueError("deadline must be > 0")
        reply = self._roundtrip(Envelope(
            kind=Kind.REQUEST, correlation_id=self._next(),
            topic_or_target=target, payload=payload,
            deadline_ns=round(deadline_s * 1e9),
            source=source or self.node_id), deadline_s)
        return reply.payload

    def publish(self, topic: str, payload: bytes, source: str | None = None) -> None:
        """Fire-and-forget over TCP; the broker fans out."""
        self._send(Envelope(
            kind=Kind.EVENT, correlation_id=0, topic_or_target=topic,
            payload=payload, source=source or self.node_id))

    def subscribe(self, topic_pattern: str,
                  callback: Callable[[Envelope], None] | None = None) -> Subscription:
        sub_id = self._next()
        sub = Subscription(self, sub_id, topic_pattern,
                           Endpoint(self.node_id, self.address, self.incarnation),
                           callback)
        with self._lock:
            self._subs[sub_id] = sub
        self._control("subscribe", {
            "pattern": topic_pattern, "sub_id": sub_id, "node_id": self.node_id})
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs.pop(sub.sub_id, None)
        sub.close()

    def _note_callback_error(self, sub: Subscription) -> None:
        pass  # client side keeps no global error counter

    def register_stream(self, stream_id: str, rate_hz: float) -> None:
        self._control("stream_register", {
            "stream_id": stream_id, "rate_hz": rate_hz, "node_id": self.node_id})

    def stream_push(self, stream_id: str, payload: bytes) -> None:
        self._send(Envelope(
            kind=Kind.STREAM_FRAME, correlation_id=0,
            topic_or_target=stream_id, payload=payload, source=self.node_id))

    def open_stream(self, stream_id: str) -> StreamHandle:
        open_id = self._next()
        handle = StreamHandle()
        with self._lock:
            self._streams[open_id] = handle
        info = self._control("stream_open", {"stream_id": stream_id, "open_id": open_id})
        handle.rate_hz = info.get("rate_hz", 0.0)
        return handle

    def close(self) -> None:
        self._worker.stop()
        self._fail_all(TargetUnavailable("client closed"))
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
