import json
import socket
import struct
import threading
import time

import pytest

from fedmon.broker import BrokerClient, BrokerServer, RemoteError, wire
from fedmon.broker.client import parse_endpoint
from fedmon.core import Message


def raw_conn(endpoint):
    host, port = parse_endpoint(endpoint)
    s = socket.create_connection((host, port), timeout=5)
    return s


def read_frames(sock, want=1, timeout=5.0):
    dec = wire.FrameDecoder()
    out = []
    sock.settimeout(timeout)
    while len(out) < want:
        data = sock.recv(65536)
        if not data:
            break
        out.extend(dec.feed(data))
    return out


def test_parse_endpoint():
    assert parse_endpoint("h:1") == ("h", 1)
    assert parse_endpoint(":7") == ("127.0.0.1", 7)
    assert parse_endpoint("host") == ("host", 5680)
    with pytest.raises(ValueError):
        parse_endpoint("h:x")


def test_publish_subscribe_over_tcp(server):
    _, ep = server
    with BrokerClient.connect(ep) as pub, BrokerClient.connect(ep) as sub:
        pub.declare_exchange("monitor")
        pub.bind("g", "monitor", "ganglia.#")
        sub.subscribe("g")
        for i in range(50):
            pub.publish("monitor", Message.create("ganglia.s.n.metrics", {"i": i}, 1.5))
        pub.publish("monitor", Message.create("inca.s.v.t", {}), flush=True)
        got = []
        while len(got) < 50:
            d = sub.get(timeout=5)
            assert d is not None
            got.append(d.message.payload["i"])
            assert d.message.published_at == 1.5
            assert d.queue == "g"
            sub.ack(d.tag)
        assert got == list(range(50))
        assert sub.get(timeout=0.2) is None
        s = pub.stats()
        assert s.published_count == 51 and s.delivered_count == 50
        sub.sync()
        assert pub.stats().acked_count == 50


def test_disconnect_requeues_unacked(server):
    _, ep = server
    with BrokerClient.connect(ep) as admin:
        admin.declare_exchange("x")
        admin.bind("q", "x", "#")
        for i in range(3):
            admin.publish("x", Message.create("a", {"i": i}))
        admin.sync()
    c1 = BrokerClient.connect(ep)
    c1.subscribe("q")
    first = c1.get(timeout=5)
    c1.ack(first.tag)
    # read the rest without acking, then drop the connection
    while c1.get(timeout=0.3) is not None:
        pass
    c1.close()
    time.sleep(0.2)
    with BrokerClient.connect(ep) as c2:
        c2.subscribe("q")
        got = []
        while (d := c2.get(timeout=0.5)) is not None:
            got.append(d.message.payload["i"])
            c2.ack(d.tag)
        assert got == [1, 2]


def test_broker_error_keeps_connection(server):
    _, ep = server
    with BrokerClient.connect(ep) as c:
        with pytest.raises(RemoteError, match="unknown exchange"):
            c.bind("q", "nope", "#")
        with pytest.raises(RemoteError, match="unknown queue"):
            c.subscribe("missing")
            c.sync()
        c.declare_exchange("ok")
        assert c.stats().published_count == 0


def test_bad_routing_key_is_broker_error(server):
    _, ep = server
    s = raw_conn(ep)
    s.sendall(wire.encode_frame(wire.Declare("x")))
    s.sendall(wire.encode_frame(wire.Publish("x", "bad..key", 0, b"{}")))
    s.sendall(wire.encode_frame(wire.StatsReq()))
    frames = read_frames(s, 2)
    assert frames[0].TYPE == wire.ERROR and frames[0].code == 2
    assert frames[1].TYPE == wire.STATS_RESP
    s.close()


def test_stats_request_returns_json(server):
    _, ep = server
    s = raw_conn(ep)
    s.sendall(wire.encode_frame(wire.StatsReq()))
    (f,) = read_frames(s)
    doc = json.loads(f.document)
    assert {"published_count", "delivered_count", "dropped_count", "queues"} <= set(doc)
    s.close()


def test_protocol_error_closes_connection(server):
    _, ep = server
    s = raw_conn(ep)
    s.sendall(struct.pack(">I", 0))
    frames = read_frames(s, 1)
    assert frames and frames[0].TYPE == wire.ERROR and frames[0].code == 1
    s.settimeout(5)
    assert s.recv(100) == b""
    s.close()


def test_oversized_frame_rejected():
    srv = BrokerServer(port=0, max_frame=1024)
    host, port = srv.start()
    try:
        s = socket.create_connection((host, port), timeout=5)
        s.sendall(struct.pack(">I", 5000) + b"\x03")
        frames = read_frames(s, 1)
        assert frames[0].TYPE == wire.ERROR and "exceeds" in frames[0].message
        # the server is still healthy for other clients
        with BrokerClient(host, port) as c:
            c.declare_exchange("x")
        s.close()
    finally:
        srv.stop()


def test_queue_capacity_drops_reported():
    srv = BrokerServer(port=0, queue_capacity=10)
    host, port = srv.start()
    try:
        with BrokerClient(host, port) as c:
            c.declare_exchange("x")
            c.bind("q", "x", "#")
            for i in range(25):
                c.publish("x", Message.create("a", {"i": i}))
            s = c.stats()
            assert s.dropped_count == 15
            assert s.queues["q"]["depth"] == 10
    finally:
        srv.stop()


def test_slow_consumer_flow_control_loses_nothing(server):
    _, ep = server
    n = 6000
    with BrokerClient.connect(ep) as admin:
        admin.declare_exchange("x")
        admin.bind("q", "x", "#")
    received = []

    def consume():
        with BrokerClient.connect(ep) as c:
            c.subscribe("q")
            while len(received) < n:
                d = c.get(timeout=10)
                if d is None:
                    return
                received.append(d.message.payload["i"])
                c.ack(d.tag)
                if len(received) % 1000 == 0:
                    time.sleep(0.05)

    t = threading.Thread(target=consume)
    t.start()
    time.sleep(0.2)
    with BrokerClient.connect(ep) as pub:
        for i in range(n):
            pub.publish("x", Message.create("a", {"i": i}))
        pub.sync(timeout=30)
    t.join(30)
    assert received == list(range(n))


def test_port_in_use():
    a = BrokerServer(port=0)
    host, port = a.start()
    try:
        with pytest.raises(OSError):
            BrokerServer(port=port).start()
    finally:
        a.stop()
