import hashlib
import os
import threading
import time

import pytest

from truffle import wire
from truffle.buffer import EntryState
from truffle.engine import StorageDescriptor
from truffle.proxy import MalformedEnvelope, Sidecar, SidecarConfig, parse_envelope
from truffle.sim.backends import KvsServer
from truffle.sim.clock import SimClock
from truffle.sim.network import LatencyProfile, LocalNetwork
from truffle.watcher import EventKind, SchedulingEvent

MIB = 1 << 20


class FakePlatform:
    """Records invocations; optionally publishes a schedule event for each one."""

    def __init__(self, schedule_to=None, sidecars=(), status=200, hang_s=0.0):
        self.requests = []
        self.schedule_to = schedule_to
        self.sidecars = list(sidecars)
        self.status = status
        self.hang_s = hang_s

    def __call__(self, req):
        self.requests.append(req)
        if self.hang_s:
            time.sleep(self.hang_s)
        if self.schedule_to:
            event = SchedulingEvent(req.header(wire.H_TARGET), self.schedule_to, EventKind.SCHEDULED)
            for sc in self.sidecars:
                sc.watcher.ingest_event(event)
        return wire.Response(self.status, b"done")


def make_node(net, name, addr, **cfg):
    config = SidecarConfig(listen_addr=addr, platform_addr="platform:8080", **cfg)
    sc = Sidecar(config, net.transport(name))
    net.register(addr, sc, node=name)
    return sc


@pytest.fixture
def cluster():
    net = LocalNetwork(SimClock(scale=0.01))
    a = make_node(net, "n0", "n0:7070", forward_timeout_ms=2000)
    b = make_node(net, "n1", "n1:7070")
    platform = FakePlatform(schedule_to="n0:7070", sidecars=[a, b])
    net.register("platform:8080", platform)
    return net, a, b, platform


def invoke(sc, target="fn-b", body=b"", **headers):
    hdrs = {wire.H_TARGET: target, **headers}
    return sc.handle(wire.Request("POST", "/invoke", hdrs, body))


def wait_for(pred, timeout=2.0):
    deadline = time.monotonic() + timeout
    while not pred():
        if time.monotonic() > deadline:
            raise AssertionError("condition not reached")
        time.sleep(0.001)


def test_cold_direct_invoke_local_host(cluster):
    _, a, _, platform = cluster
    resp = invoke(a, body=b"hello", **{"Content-Type": "text/plain"})
    assert resp.status == 200
    fwd = platform.requests[0]
    key = fwd.header(wire.H_KEY)
    assert fwd.body == b""
    assert fwd.header("Content-Type") is None
    assert len(key) == 32
    wait_for(lambda: a.buffer.status(key) is EntryState.READY)
    assert a.buffer.take(key, 10) == b"hello"


def test_exactly_one_key_per_cold_invocation(cluster):
    _, a, _, platform = cluster
    platform.schedule_to = None
    for i in range(5):
        invoke(a, target=f"fn-{i}", body=b"x")
    keys = [r.header(wire.H_KEY) for r in platform.requests]
    assert len(set(keys)) == 5
    assert len(a.buffer) == 5


def test_cold_direct_remote_host_pushes_to_peer(cluster):
    _, a, b, platform = cluster
    platform.schedule_to = "n1:7070"
    payload = os.urandom(100 * MIB)
    resp = invoke(a, body=payload)
    assert resp.status == 200
    key = platform.requests[0].header(wire.H_KEY)
    got = b.buffer.take(key, 5000)
    assert hashlib.sha256(got).digest() == hashlib.sha256(payload).digest()
    wait_for(lambda: len(a.reports) == 1)
    assert a.reports[0].ok
    assert key not in a.buffer


def test_cold_kvs_invoke_fetches_from_store(cluster):
    net, a, _, platform = cluster
    kvs = KvsServer(net.clock, LatencyProfile())
    kvs.seed("input-7", b"stored")
    net.register("kvs:6379", kvs)
    resp = invoke(a, **StorageDescriptor.kvs("kvs:6379", "input-7").to_headers())
    assert resp.status == 200
    key = platform.requests[0].header(wire.H_KEY)
    assert platform.requests[0].header(wire.H_LOCATOR) is None
    assert a.buffer.take(key, 2000) == b"stored"


def test_cold_kvs_remote_host_delegates_prefetch(cluster):
    net, a, b, platform = cluster
    kvs = KvsServer(net.clock, LatencyProfile())
    kvs.seed("input-7", b"stored")
    net.register("kvs:6379", kvs)
    platform.schedule_to = "n1:7070"
    invoke(a, **StorageDescriptor.kvs("kvs:6379", "input-7").to_headers())
    key = platform.requests[0].header(wire.H_KEY)
    assert b.buffer.take(key, 2000) == b"stored"


def test_hot_path_is_passthrough(cluster):
    _, a, _, platform = cluster
    a.watcher.ingest_event(SchedulingEvent("fn-b", "n0:7070", EventKind.SCHEDULED))
    headers = {wire.H_TARGET: "fn-b", "X-Custom": "1", "Content-Type": "text/plain"}
    req = wire.Request("POST", "/invoke", headers, b"body bytes")
    assert a.handle(req).status == 200
    fwd = platform.requests[0]
    assert fwd.body == b"body bytes"
    assert fwd.headers == headers
    assert fwd.header(wire.H_KEY) is None
    assert len(a.buffer) == 0


@pytest.mark.parametrize("headers, body", [
    ({}, b""),
    ({wire.H_TARGET: "f", wire.H_BUFFER: "other"}, b""),
    ({wire.H_TARGET: "f", wire.H_KIND: "kvs"}, b""),
    ({wire.H_TARGET: "f", wire.H_KIND: "ftp"}, b""),
    ({wire.H_TARGET: "f", **StorageDescriptor.kvs("kvs:6379", "k").to_headers()}, b"stray body"),
])
def test_malformed_envelopes(cluster, headers, body):
    _, a, _, platform = cluster
    with pytest.raises(MalformedEnvelope):
        parse_envelope(wire.Request("POST", "/invoke", headers, body))
    resp = a.handle(wire.Request("POST", "/invoke", headers, body))
    assert resp.status == 400
    assert resp.error == "malformed"
    assert platform.requests == []


def test_forward_unknown_function_status_passes_through(cluster):
    _, a, _, platform = cluster
    platform.status = 404
    assert invoke(a, body=b"x").status == 404


def test_platform_hang_gives_504():
    net = LocalNetwork(SimClock(scale=0.01))
    a = make_node(net, "n0", "n0:7070", forward_timeout_ms=50)
    net.register("platform:8080", FakePlatform(hang_s=0.3))
    resp = invoke(a, body=b"x")
    assert resp.status == 504
    assert resp.error == "gateway_timeout"


def test_platform_unreachable_gives_502():
    net = LocalNetwork(SimClock(scale=0.01))
    a = make_node(net, "n0", "n0:7070")
    resp = invoke(a, body=b"x")
    assert resp.status == 502
    assert resp.error == "platform_unreachable"


def test_buffer_read_codes(cluster):
    _, a, _, _ = cluster
    a.config.buffer_timeout_ms = 20
    read = lambda k: a.handle(wire.Request("GET", f"/truffle/buffer/{k}", {}, b""))  # noqa: E731
    a.buffer.put("k1", b"v")
    ok = read("k1")
    assert ok.status == 200 and ok.body == b"v"
    assert read("k1").status == 404
    assert read("absent").status == 504
    a.buffer.announce("bad")
    a.buffer.fail("bad", "NoSuchObject: b/o")
    failed = read("bad")
    assert failed.status == 424 and failed.error == "fetch_failed"
    assert a.handle(wire.Request("DELETE", "/truffle/buffer/x", {}, b"")).status == 404


def test_waiting_reader_unblocked_by_peer_transfer(cluster):
    _, a, b, _ = cluster
    out = {}

    def reader():
        out["resp"] = b.handle(wire.Request("GET", "/truffle/buffer/k9", {}, b""))

    t = threading.Thread(target=reader)
    t.start()
    time.sleep(0.05)
    ack = a.passer.call_target_host_truffle("n1:7070", "k9", b"late data")
    assert ack.body == b"ack"
    t.join(2)
    assert out["resp"].status == 200
    assert out["resp"].body == b"late data"


def test_duplicate_transfer_conflicts_and_keeps_first(cluster):
    _, _, b, _ = cluster
    first = b.handle(wire.Request("POST", "/truffle/transfer/k1", {}, b"first"))
    second = b.handle(wire.Request("POST", "/truffle/transfer/k1", {}, b"second"))
    assert first.status == 200
    assert second.status == 409
    assert b.buffer.take("k1", 10) == b"first"


def test_transfer_over_capacity_507():
    net = LocalNetwork(SimClock(scale=0.01))
    b = make_node(net, "n1", "n1:7070", capacity_bytes=4)
    assert b.handle(wire.Request("POST", "/truffle/transfer/k", {}, b"12345")).status == 507


def test_peer_prefetch_endpoint_validation(cluster):
    _, _, b, _ = cluster
    direct = b.handle(wire.Request("POST", "/truffle/prefetch/k", {}, b""))
    assert direct.status == 400
    hdrs = StorageDescriptor.kvs("kvs:6379", "x").to_headers()
    b.buffer.announce("taken")
    assert b.handle(wire.Request("POST", "/truffle/prefetch/taken", hdrs, b"")).status == 409


def test_schedule_timeout_discards_key():
    net = LocalNetwork(SimClock(scale=0.01))
    a = make_node(net, "n0", "n0:7070", schedule_timeout_ms=30)
    net.register("platform:8080", FakePlatform())
    invoke(a, body=b"x")
    wait_for(lambda: any(e[0] == "schedule_timeout" for e in a.trace))
    assert len(a.buffer) == 0


def test_endpoints_over_real_http():
    platform = FakePlatform()
    p_srv, p_addr = wire.serve_http(platform, "127.0.0.1:0")
    sc = Sidecar(SidecarConfig(listen_addr="127.0.0.1:0", platform_addr=p_addr), wire.HttpTransport())
    addr = sc.serve()
    platform.schedule_to, platform.sidecars = addr, [sc]
    http = wire.HttpTransport()
    try:
        resp = http.request(addr, "POST", "/invoke", {wire.H_TARGET: "fn-b"}, b"over http", 5000)
        assert resp.status == 200 and resp.body == b"done"
        key = platform.requests[0].header(wire.H_KEY)
        got = http.request(addr, "GET", f"/truffle/buffer/{key}", {}, b"", 5000)
        assert got.status == 200 and got.body == b"over http"
        again = http.request(addr, "GET", f"/truffle/buffer/{key}", {}, b"", 5000)
        assert again.status == 404
    finally:
        sc.close()
        p_srv.shutdown()
        p_srv.server_close()
