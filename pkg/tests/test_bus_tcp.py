"""TCP transport: same envelope contract as the in-process bus."""

from __future__ import annotations

import time

import pytest

from iccs.bus import Bus, DeadlineExceeded, NameNotFound
from iccs.bus.tcp import BusServer, PortUnavailable, TcpBusClient
from iccs.clock import WallClock


@pytest.fixture
def server():
    bus = Bus(WallClock())
    srv = BusServer(bus)
    yield srv
    srv.close()
    bus.shutdown()


def test_port_unavailable(server):
    bus2 = Bus(WallClock())
    with pytest.raises(PortUnavailable):
        BusServer(bus2, port=server.port)
    bus2.shutdown()


def test_echo_request_over_tcp(server):
    service = TcpBusClient("echo-node", port=server.port)
    service.serve("svc/echo", lambda payload: payload + b"!")
    client = TcpBusClient("caller", port=server.port)
    assert client.request("svc/echo", b"ping", deadline_s=2.0) == b"ping!"
    client.close()
    service.close()


def test_resolve_and_name_errors_over_tcp(server):
    client = TcpBusClient("caller", port=server.port)
    with pytest.raises(NameNotFound):
        client.resolve_name("svc/none")
    with pytest.raises(NameNotFound):
        client.request("svc/none", b"x", deadline_s=0.5)
    client.close()


def test_deadline_over_tcp(server):
    service = TcpBusClient("slow-node", port=server.port)
    service.serve("svc/slow", lambda p: (time.sleep(0.5), b"late")[1])
    client = TcpBusClient("caller", port=server.port)
    t0 = time.monotonic()
    with pytest.raises(DeadlineExceeded):
        client.request("svc/slow", b"x", deadline_s=0.05)
    assert 0.05 <= time.monotonic() - t0 < 0.4
    client.close()
    service.close()


def test_pubsub_over_tcp(server):
    consumer = TcpBusClient("consumer", port=server.port)
    sub = consumer.subscribe("status/b01/*")
    producer = TcpBusClient("producer", port=server.port)
    producer.publish("status/b01/motor", b"moving")
    env = sub.get(2.0)
    assert env.payload == b"moving"
    assert env.topic_or_target == "status/b01/motor"
    assert env.source == "producer"
    producer.close()
    consumer.close()


def test_mixed_local_and_remote_peers(server):
    # A local (in-process) host and a TCP peer can call each other.
    local_host = server.bus.host("local-node")
    local_host.serve("svc/local", lambda p: b"local:" + p)

    remote = TcpBusClient("remote-node", port=server.port)
    remote.serve("svc/remote", lambda p: b"remote:" + p)

    assert remote.request("svc/local", b"a", deadline_s=2.0) == b"local:a"
    assert server.bus.request("svc/remote", b"b", deadline_s=2.0) == b"remote:b"
    remote.close()


def test_stream_over_tcp(server):
    producer = TcpBusClient("cam-node", port=server.port)
    producer.register_stream("video/cam1", rate_hz=10.0)
    consumer = TcpBusClient("viewer", port=server.port)
    handle = consumer.open_stream("video/cam1")
    assert handle.rate_hz == 10.0
    for i in range(3):
        producer.stream_push("video/cam1", bytes([i]))
    frames = [handle.get(2.0) for _ in range(3)]
    assert [seq for seq, _ in frames] == [1, 2, 3]
    assert [p for _, p in frames] == [b"\x00", b"\x01", b"\x02"]
    producer.close()
    consumer.close()


def test_disconnect_deregisters_names(server):
    peer = TcpBusClient("ephemeral", port=server.port)
    peer.serve("svc/ephemeral", lambda p: p)
    assert server.bus.resolve_name("svc/ephemeral").node_id == "ephemeral"
    peer.close()
    deadline = time.monotonic() + 2.0
    while time.monotonic() < deadline:
        try:
            server.bus.resolve_name("svc/ephemeral")
            time.sleep(0.01)
        except NameNotFound:
            return
    pytest.fail("name survived peer disconnect")
