"""In-process distribution bus.

One `Bus` instance is the broker for a facility: it owns the name registry,
the subscription table, and the stream channels. Components attach either
directly (single-process mode) or through the TCP transport in
`iccs.bus.tcp`, which carries the same envelopes over a socket.

Delivery guarantees, honored by both transports:
  - resolve returns the most recent completed registration (highest
    incarnation) for a name;
  - each published event is delivered exactly once per matching
    subscription, in per-publisher order;
  - a reply is consumed only by the requester whose correlation id matches;
  - a request never blocks its caller past deadline + scheduling slack;
  - stream frames carry strictly increasing sequence numbers, no replay
    for late joiners.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from iccs.bus.envelope import FLAG_ERROR, Envelope, Kind
from iccs.clock import Clock, WallClock


class BusError(Exception):
    """Base class for bus-level failures."""


class MalformedName(BusError):
    pass


class MalformedTopic(BusError):
    pass


class StaleIncarnation(BusError):
    pass


class NameNotFound(BusError):
    pass


class DeadlineExceeded(BusError):
    pass


class TargetUnavailable(BusError):
    pass


class StreamNotFound(BusError):
    pass


class RequestFailed(BusError):
    """The target's handler raised; the original error text is carried."""


@dataclass(frozen=True)
class Endpoint:
    """One addressable system on the bus."""

    node_id: str
    address: str
    incarnation: int = 1


@dataclass(frozen=True)
class NameRecord:
    name: str
    endpoint: Endpoint
    registered_at: int  # bus clock, ns


def validate_name(name: str, *, allow_wildcard: bool = False) -> list[str]:
    """Split a hierarchical name; raise MalformedName if it is not well formed.

    Names are non-empty, slash-delimited, with non-empty segments. A '*'
    segment is only legal in subscription patterns.
    """
    if not isinstance(name, str) or not name:
        raise MalformedName(f"empty name {name!r}")
    segments = name.split("/")
    for seg in segments:
        if not seg:
            raise MalformedName(f"empty segment in {name!r}")
        if "*" in seg and not (allow_wildcard and seg == "*"):
            raise MalformedName(f"wildcard not allowed in {name!r}")
    return segments


def validate_topic(topic: str, *, pattern: bool = False) -> list[str]:
    try:
        return validate_name(topic, allow_wildcard=pattern)
    except MalformedName as exc:
        raise MalformedTopic(str(exc)) from None


def topic_matches(pattern: str, topic: str) -> bool:
    """True when `topic` matches `pattern`; '*' matches exactly one segment."""
    pat = pattern.split("/")
    top = topic.split("/")
    if len(pat) != len(top):
        return False
    return all(p == "*" or p == t for p, t in zip(pat, top))


class Subscription:
    """A live subscription: either callback-driven or queue-consumed."""

    def __init__(self, bus: "Bus", sub_id: int, topic_pattern: str,
                 subscriber: Endpoint, callback: Callable[[Envelope], None] | None):
        self.bus = bus
        self.sub_id = sub_id
        self.topic_pattern = topic_pattern
        self._pattern_segments = topic_pattern.split("/")
        self.subscriber = subscriber
        self.delivery_counter = 0
        self._callback = callback
        self._queue: deque[Envelope] = deque()
        self._cond = threading.Condition()
        self._delivery_lock = threading.RLock()
        self._closed = False

    def _matches(self, topic_segments: list[str]) -> bool:
        pattern = self._pattern_segments
        if len(pattern) != len(topic_segments):
            return False
        return all(p == "*" or p == t for p, t in zip(pattern, topic_segments))

    def _deliver(self, env: Envelope) -> None:
        # Per-subscription serialization: one delivery at a time, in order.
        if self._callback is None:
            with self._cond:
                if self._closed:
                    return
                self.delivery_counter += 1
                self._queue.append(env)
                self._cond.notify()
            return
        with self._delivery_lock:
            with self._cond:
                if self._closed:
                    return
                self.delivery_counter += 1
            # Callback runs on the publisher's thread, serialized by the
            # delivery lock; it must not block indefinitely.
            try:
                self._callback(env)
            except Exception:
                self.bus._note_callback_error(self)

    def get(self, timeout: float | None = None) -> Envelope:
        """Pop the next delivered event (queue-mode subscriptions only)."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._queue:
                if self._closed:
                    raise BusError("subscription closed")
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise DeadlineExceeded(f"no event within {timeout}s")
                self._cond.wait(remaining)
            return self._queue.popleft()

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def unsubscribe(self) -> None:
        self.bus.unsubscribe(self)


class _Pending:
    """Reply slot for one in-flight request."""

    __slots__ = ("event", "reply", "error", "on_done")

    def __init__(self) -> None:
        self.event = threading.Event()
        self.reply: Envelope | None = None
        self.error: BusError | None = None
        # Optional completion hook so transports can forward replies without
        # parking a thread on `event`.
        self.on_done: Callable[["_Pending"], None] | None = None

    def complete(self, reply: Envelope) -> None:
        if not self.event.is_set():
            self.reply = reply
            self.event.set()
            if self.on_done is not None:
                self.on_done(self)

    def fail(self, error: BusError) -> None:
        if not self.event.is_set():
            self.error = error
            self.event.set()
            if self.on_done is not None:
                self.on_done(self)


class ServiceHost:
    """Single logical execution context: one queue, one worker thread.

    All requests to names served by this host are processed strictly in
    arrival order, which is how front-end processors serialize commands.
    """

    def __init__(self, bus: "Bus", node_id: str, endpoint: Endpoint,
                 queue_depth: int = 64):
        self.bus = bus
        self.node_id = node_id
        self.endpoint = endpoint
        self.queue_depth = queue_depth
        self._handlers: dict[str, Callable[[bytes], bytes]] = {}
        self._queue: deque[tuple[str, Envelope, _Pending]] = deque()
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(
            target=self._run, name=f"host:{node_id}", daemon=True)
        self._thread.start()

    def serve(self, name: str, handler: Callable[[bytes], bytes]) -> NameRecord:
        """Register `name` on the bus, handled by this host's worker."""
        record = self.bus.register_name(name, self.endpoint)
        with self._cond:
            self._handlers[name] = handler
        return record

    def _enqueue(self, target: str, env: Envelope, pending: _Pending) -> None:
        with self._cond:
            if self._stopped:
                raise TargetUnavailable(f"host {self.node_id} stopped")
            if len(self._queue) >= self.queue_depth:
                raise TargetUnavailable(
                    f"host {self.node_id} queue full (depth {self.queue_depth})")
            self._queue.append((target, env, pending))
            self._cond.notify()

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._queue and not self._stopped:
                    self._cond.wait()
                if self._stopped and not self._queue:
                    return
                target, env, pending = self._queue.popleft()
                handler = self._handlers.get(target)
            if handler is None:
                pending.fail(TargetUnavailable(f"{target} no longer served"))
                continue
            if pending.event.is_set():
                continue  # caller already timed out; skip stale work
            try:
                payload = handler(env.payload)
            except Exception as exc:  # handler errors travel to the caller
                pending.fail(RequestFailed(f"{type(exc).__name__}: {exc}"))
                continue
            pending.complete(Envelope(
                kind=Kind.REPLY,
                correlation_id=env.correlation_id,
                topic_or_target=target,
                payload=payload if payload is not None else b"",
                sent_at_ns=self.bus.clock.now_ns(),
                source=self.node_id,
            ))

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            pending = list(self._queue)
            self._queue.clear()
            self._cond.notify_all()
        for _, _, p in pending:
            p.fail(TargetUnavailable(f"host {self.node_id} stopped"))
        self._thread.join(timeout=2.0)


class RemoteLink:
    """Transport hook for one remote peer (implemented by the TCP server)."""

    def send_event(self, sub_id: int, env: Envelope) -> None:
        raise NotImplementedError

    def send_request(self, env: Envelope, pending: _Pending) -> None:
        raise NotImplementedError


class Bus:
    """Broker: name registry, pub/sub fan-out, request routing, streams."""

    def __init__(self, clock: Clock | None = None, *,
                 deadline_slack_s: float = 0.020,
                 dedupe_per_subscriber: bool = False):
        self.clock = clock or WallClock()
        self.deadline_slack_s = deadline_slack_s
        self.dedupe_per_subscriber = dedupe_per_subscriber
        self._lock = threading.RLock()
        self._names: dict[str, NameRecord] = {}
        self._incarnations: dict[str, int] = {}
        self._hosts: dict[str, ServiceHost] = {}
        self._remotes: dict[str, RemoteLink] = {}
        self._subs: list[Subscription] = []
        self._streams: dict[str, _Stream] = {}
        self._next_corr = 1
        self._next_sub = 1
        self._next_event_serial = 1
        self.callback_errors = 0

    # -- naming ------------------------------------------------------------

    def register_name(self, name: str, endpoint: Endpoint) -> NameRecord:
        validate_name(name)
        with self._lock:
            existing = self._names.get(name)
            if existing is not None and endpoint.incarnation <= existing.endpoint.incarnation:
                raise StaleIncarnation(
                    f"{name}: incarnation {endpoint.incarnation} <= "
                    f"live {existing.endpoint.incarnation}")
            record = NameRecord(name, endpoint, self.clock.now_ns())
            self._names[name] = record
            return record

    def resolve_name(self, name: str) -> Endpoint:
        with self._lock:
            record = self._names.get(name)
        if record is None:
            raise NameNotFound(name)
        return record.endpoint

    def deregister_name(self, name: str) -> None:
        with self._lock:
            self._names.pop(name, None)

    def deregister_node(self, node_id: str) -> None:
        """Drop every name owned by `node_id` (process death / shutdown)."""
        with self._lock:
            gone = [n for n, r in self._names.items()
                    if r.endpoint.node_id == node_id]
            for n in gone:
                del self._names[n]
            self._remotes.pop(node_id, None)

    def live_names(self) -> dict[str, Endpoint]:
        with self._lock:
            return {n: r.endpoint for n, r in self._names.items()}

    def next_incarnation(self, node_id: str) -> int:
        with self._lock:
            inc = self._incarnations.get(node_id, 0) + 1
            self._incarnations[node_id] = inc
            return inc

    # -- hosts and request/reply --------------------------------------------

    def host(self, node_id: str, queue_depth: int = 64) -> ServiceHost:
        """Create the serialized execution context for one node."""
        incarnation = self.next_incarnation(node_id)
        endpoint = Endpoint(node_id, f"inproc/{node_id}", incarnation)
        host = ServiceHost(self, node_id, endpoint, queue_depth)
        with self._lock:
            self._hosts[node_id] = host
        return host

    def attach_remote(self, node_id: str, link: RemoteLink) -> None:
        with self._lock:
            self._remotes[node_id] = link

    def next_correlation_id(self) -> int:
        with self._lock:
            corr = self._next_corr
            self._next_corr += 1
            return corr

    def request(self, target: str, payload: bytes, deadline_s: float,
                source: str = "anon") -> bytes:
        """Send a request and block for its reply (or a bus error)."""
        if deadline_s <= 0:
            raise ValueError("deadline must be > 0")
        endpoint = self.resolve_name(target)
        env = Envelope(
            kind=Kind.REQUEST,
            correlation_id=self.next_correlation_id(),
            topic_or_target=target,
            payload=payload,
            sent_at_ns=self.clock.now_ns(),
            deadline_ns=round(deadline_s * 1e9),
            source=source,
        )
        pending = _Pending()
        with self._lock:
            host = self._hosts.get(endpoint.node_id)
            remote = self._remotes.get(endpoint.node_id)
        if host is not None:
            host._enqueue(target, env, pending)
        elif remote is not None:
            remote.send_request(env, pending)
        else:
            raise TargetUnavailable(f"{target}: node {endpoint.node_id} not attached")
        if not pending.event.wait(deadline_s):
            pending.fail(DeadlineExceeded(f"{target} did not reply in {deadline_s}s"))
        if pending.error is not None:
            raise pending.error
        reply = pending.reply
        assert reply is not None
        if reply.is_error:
            raise RequestFailed(reply.payload.decode("utf-8", "replace"))
        return reply.payload

    # -- publish/subscribe ---------------------------------------------------

    def subscribe(self, topic_pattern: str,
                  callback: Callable[[Envelope], None] | None = None,
                  subscriber: Endpoint | None = None) -> Subscription:
        validate_topic(topic_pattern, pattern=True)
        if subscriber is None:
            subscriber = Endpoint("anon", "inproc/anon", 1)
        with self._lock:
            sub = Subscription(self, self._next_sub, topic_pattern, subscriber, callback)
            self._next_sub += 1
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            try:
                self._subs.remove(sub)
            except ValueError:
                pass
        sub.close()

    def publish(self, topic: str, payload: bytes, source: str = "anon") -> int:
        """Fan an event out to every matching subscription; returns the count."""
        segments = validate_topic(topic)
        with self._lock:
            serial = self._next_event_serial
            self._next_event_serial += 1
            matches = [s for s in self._subs if s._matches(segments)]
        if self.dedupe_per_subscriber:
            seen: set[str] = set()
            unique = []
            for sub in matches:
                if sub.subscriber.node_id in seen:
                    continue
                seen.add(sub.subscriber.node_id)
                unique.append(sub)
            matches = unique
        env = Envelope(
            kind=Kind.EVENT,
            correlation_id=serial,
            topic_or_target=topic,
            payload=payload,
            sent_at_ns=self.clock.now_ns(),
            source=source,
        )
        for sub in matches:
            sub._deliver(env)
        return len(matches)

    def _note_callback_error(self, sub: Subscription) -> None:
        with self._lock:
            self.callback_errors += 1

    # -- stream channels -----------------------------------------------------

    def register_stream(self, stream_id: str, rate_hz: float,
                        producer: str = "anon") -> None:
        validate_name(stream_id)
        with self._lock:
            if stream_id not in self._streams:
                self._streams[stream_id] = _Stream(stream_id, rate_hz, producer)

    def stream_push(self, stream_id: str, payload: bytes) -> int:
        with self._lock:
            stream = self._streams.get(stream_id)
        if stream is None:
            raise StreamNotFound(stream_id)
        return stream.push(payload, self.clock.now_ns())

    def open_stream(self, stream_id: str) -> "StreamHandle":
        """Attach a consumer at the live edge of an existing stream."""
        with self._lock:
            stream = self._streams.get(stream_id)
        if stream is None:
            raise StreamNotFound(stream_id)
        return stream.attach()

    def stream_rate(self, stream_id: str) -> float:
        with self._lock:
            stream = self._streams.get(stream_id)
        if stream is None:
            raise StreamNotFound(stream_id)
        return stream.rate_hz

    def stream_consumers(self, stream_id: str) -> int:
        with self._lock:
            stream = self._streams.get(stream_id)
        return stream.consumer_count() if stream is not None else 0

    def stream_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._streams)

    # -- lifecycle -----------------------------------------------------------

    def shutdown(self) -> None:
        with self._lock:
            hosts = list(self._hosts.values())
            self._hosts.clear()
            subs = list(self._subs)
            self._subs.clear()
            self._names.clear()
            self._streams.clear()
        for host in hosts:
            host.stop()
        for sub in subs:
            sub.close()


class StreamHandle:
    """Consumer end of a stream channel; joins at the live edge."""

    def __init__(self, rate_hz: float = 0.0,
                 on_close: Callable[["StreamHandle"], None] | None = None):
        self.rate_hz = rate_hz
        self._on_close = on_close
        self._queue: deque[tuple[int, bytes, int]] = deque()
        self._cond = threading.Condition()
        self._last_seq = 0
        self.gaps = 0
        self.closed = False

    def _push(self, seq: int, payload: bytes, ts_ns: int) -> None:
        with self._cond:
            if self.closed:
                return
            if self._last_seq and seq != self._last_seq + 1:
                self.gaps += seq - self._last_seq - 1
            self._last_seq = seq
            self._queue.append((seq, payload, ts_ns))
            self._cond.notify()

    def get(self, timeout: float | None = None) -> tuple[int, bytes]:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._queue:
                remaining = None if deadline is None else deadline - time.monotonic()
                if self.closed or (remaining is not None and remaining <= 0):
                    raise DeadlineExceeded("no frame available")
                self._cond.wait(remaining if remaining is None else max(remaining, 0.001))
            seq, payload, _ = self._queue.popleft()
            return seq, payload

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()
        if self._on_close is not None:
            self._on_close(self)


class _Stream:
    def __init__(self, stream_id: str, rate_hz: float, producer: str):
        self.stream_id = stream_id
        self.rate_hz = rate_hz
        self.producer = producer
        self._lock = threading.Lock()
        self._consumers: list[StreamHandle] = []
        self._seq = 0

    def push(self, payload: bytes, ts_ns: int) -> int:
        with self._lock:
            self._seq += 1
            seq = self._seq
            consumers = list(self._consumers)
        for handle in consumers:
            handle._push(seq, payload, ts_ns)
        return seq

    def attach(self) -> StreamHandle:
        handle = StreamHandle(self.rate_hz, on_close=self.detach)
        with self._lock:
            self._consumers.append(handle)
        return handle

    def detach(self, handle: StreamHandle) -> None:
        with self._lock:
            try:
                self._consumers.remove(handle)
            except ValueError:
                pass

    def consumer_count(self) -> int:
        with self._lock:
            return len(self._consumers)
