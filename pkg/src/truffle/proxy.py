"""The per-node sidecar: ingress for invocations plus the buffer endpoints.

Routes::

    POST /invoke                   client or local function invocation
    GET  /truffle/buffer/{key}     co-located function redeems its input
    POST /truffle/transfer/{key}   peer sidecar pushes a payload here
    POST /truffle/prefetch/{key}   peer sidecar asks this node to fetch from storage

A cold invocation is split in two: the platform gets the request with a
reference key in place of the body, and a background path waits for the
scheduler to name the host, then moves the data to that host's buffer.
Invocations of functions that are already live are forwarded untouched.
"""

from __future__ import annotations

import logging
import secrets
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from truffle import wire
from truffle.buffer import Buffer
from truffle.engine import DataEngine, StorageDescriptor, StorageKind
from truffle.errors import (
    BufferCapacityError,
    BufferConflict,
    BufferNotFound,
    BufferTimeout,
    FetchFailed,
    GatewayTimeout,
    SchedulingTimeout,
    TransportError,
    UnsupportedStorage,
)
from truffle.passing import ColdStartPass, TransferReport
from truffle.watcher import Watcher

log = logging.getLogger(__name__)

# headers that describe the input; dropped when the body is replaced by a key
_INPUT_HEADERS = {
    h.lower()
    for h in (wire.H_KIND, wire.H_LOCATOR, wire.H_ENDPOINT, wire.H_CREDENTIALS, wire.H_BUFFER,
              "Content-Length", "Content-Type")
}


@dataclass
class SidecarConfig:
    listen_addr: str = "127.0.0.1:7070"
    platform_addr: str = "127.0.0.1:8080"
    buffer_timeout_ms: float = 30_000
    forward_timeout_ms: float = 120_000
    schedule_timeout_ms: float = 120_000
    capacity_bytes: int = 1 << 30
    credentials: dict[str, str] = field(default_factory=dict)


@dataclass
class RequestEnvelope:
    target_function: str
    storage: StorageDescriptor
    inline_payload: Optional[bytes]
    trace_id: str
    reference_key: Optional[str] = None


class MalformedEnvelope(ValueError):
    pass


def parse_envelope(req: wire.Request) -> RequestEnvelope:
    target = (req.header(wire.H_TARGET) or "").strip()
    if not target:
        raise MalformedEnvelope(f"missing {wire.H_TARGET}")
    buffer_name = req.header(wire.H_BUFFER)
    if buffer_name is not None and buffer_name != "default":
        raise MalformedEnvelope(f"unknown buffer {buffer_name!r}")
    storage = StorageDescriptor.from_headers(req.header)
    try:
        storage.validate()
    except (ValueError, UnsupportedStorage) as exc:
        raise MalformedEnvelope(str(exc)) from exc
    if storage.kind == StorageKind.DIRECT:
        inline = req.body
    elif req.body:
        raise MalformedEnvelope("only direct invocations carry a body")
    else:
        inline = None
    trace_id = req.header(wire.H_TRACE) or uuid.uuid4().hex
    return RequestEnvelope(target, storage, inline, trace_id)


def new_reference_key() -> str:
    return secrets.token_hex(16)


class Sidecar:
    def __init__(
        self,
        config: SidecarConfig,
        transport: wire.Transport,
        watcher: Optional[Watcher] = None,
        buffer: Optional[Buffer] = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.config = config
        self.address = config.listen_addr
        self.transport = transport
        self.watcher = watcher if watcher is not None else Watcher()
        self.buffer = buffer if buffer is not None else Buffer(capacity_bytes=config.capacity_bytes,
                                       default_timeout_ms=config.buffer_timeout_ms)
        self.engine = DataEngine(transport, config.credentials)
        self.passer = ColdStartPass(self.watcher, transport, config.schedule_timeout_ms)
        self.clock = clock
        # (event, trace_id, key, timestamp); timestamps come from ``clock``
        self.trace: deque[tuple[str, str, str, float]] = deque(maxlen=100_000)
        self.reports: deque[TransferReport] = deque(maxlen=10_000)
        self._server = None

    def _mark(self, event: str, trace_id: str, key: str = "") -> None:
        self.trace.append((event, trace_id, key, self.clock()))

    # -- routing ---------------------------------------------------------

    def handle(self, req: wire.Request) -> wire.Response:
        parts = wire.split_path(req.path)
        if req.method == "POST" and parts == ["invoke"]:
            return self.handle_invoke(req)
        if len(parts) == 3 and parts[0] == "truffle":
            _, action, key = parts
            if action == "buffer" and req.method == "GET":
                return self.serve_buffer_read(key)
            if action == "transfer" and req.method == "POST":
                return self.receive_peer_transfer(key, req.body)
            if action == "prefetch" and req.method == "POST":
                return self.receive_peer_prefetch(key, req)
        return wire.error_response(404, "no_route", f"{req.method} {req.path}")

    __call__ = handle

    # -- ingress ---------------------------------------------------------

    def handle_invoke(self, req: wire.Request) -> wire.Response:
        try:
            env = parse_envelope(req)
        except MalformedEnvelope as exc:
            return wire.error_response(400, "malformed", str(exc))

        if self.watcher.is_running(env.target_function):
            self._mark("passthrough", env.trace_id)
            return self._relay(lambda: self.transport.request(
                self.config.platform_addr, "POST", "/invoke", req.headers, req.body,
                self.config.forward_timeout_ms))

        key = new_reference_key()
        env.reference_key = key
        self.buffer.announce(key)
        worker = threading.Thread(target=self._deliver, args=(env,), name=f"deliver-{key[:8]}", daemon=True)
        worker.start()
        metadata = {k: v for k, v in req.headers.items() if k.lower() not in _INPUT_HEADERS}
        metadata[wire.H_TRACE] = env.trace_id
        self._mark("forward_start", env.trace_id, key)
        return self._relay(lambda: self.forward_to_platform(env.target_function, key, metadata))

    def _relay(self, call: Callable[[], wire.Response]) -> wire.Response:
        try:
            return call()
        except GatewayTimeout as exc:
            return wire.error_response(504, "gateway_timeout", str(exc))
        except TransportError as exc:
            return wire.error_response(502, "platform_unreachable", str(exc))

    def forward_to_platform(self, target_function: str, reference_key: str,
                            metadata: Optional[dict[str, str]] = None) -> wire.Response:
        headers = dict(metadata or {})
        headers[wire.H_TARGET] = target_function
        headers[wire.H_KEY] = reference_key
        return self.transport.request(self.config.platform_addr, "POST", "/invoke", headers, b"",
                                      self.config.forward_timeout_ms)

    def _deliver(self, env: RequestEnvelope) -> None:
        key = env.reference_key or ""
        self._mark("prefetch_start", env.trace_id, key)
        try:
            host = self.watcher.wait_for_host(env.target_function, self.config.schedule_timeout_ms)
        except SchedulingTimeout as exc:
            log.warning("no host for %s: %s", env.target_function, exc)
            self.buffer.discard(key)
            self._mark("schedule_timeout", env.trace_id, key)
            return
        self._mark("host_known", env.trace_id, key)

        if host == self.address:
            self.engine.prefetch(env.storage, env.inline_payload, key, self.buffer)
            self._mark("data_ready", env.trace_id, key)
            return

        self.buffer.discard(key)
        if env.storage.kind == StorageKind.DIRECT:
            report = self.passer.initiate_pass(env.target_function, key, env.inline_payload or b"", host=host)
            self.reports.append(report)
            self._mark("data_sent" if report.ok else "transfer_failed", env.trace_id, key)
            return
        try:
            resp = self.transport.request(host, "POST", f"/truffle/prefetch/{wire.path_segment(key)}",
                                          env.storage.to_headers(), b"", self.config.forward_timeout_ms)
            ok = resp.ok
        except (TransportError, GatewayTimeout) as exc:
            log.warning("remote prefetch on %s failed: %s", host, exc)
            ok = False
        self._mark("prefetch_delegated" if ok else "transfer_failed", env.trace_id, key)

    # -- buffer endpoints ------------------------------------------------

    def serve_buffer_read(self, key: str) -> wire.Response:
        try:
            payload = self.buffer.take(key, self.config.buffer_timeout_ms)
        except BufferTimeout as exc:
            return wire.error_response(504, "timeout", str(exc))
        except FetchFailed as exc:
            return wire.error_response(424, "fetch_failed", str(exc))
        except BufferNotFound as exc:
            return wire.error_response(404, "not_found", str(exc))
        return wire.Response(200, payload, {"Content-Type": "application/octet-stream"})

    def receive_peer_transfer(self, key: str, payload: bytes) -> wire.Response:
        try:
            self.buffer.put(key, payload)
        except BufferConflict as exc:
            return wire.error_response(409, "conflict", str(exc))
        except BufferCapacityError as exc:
            return wire.error_response(507, "capacity", str(exc))
        return wire.Response(200, b"ack")

    def receive_peer_prefetch(self, key: str, req: wire.Request) -> wire.Response:
        storage = StorageDescriptor.from_headers(req.header)
        try:
            storage.validate()
        except (ValueError, UnsupportedStorage) as exc:
            return wire.error_response(400, "malformed", str(exc))
        if storage.kind == StorageKind.DIRECT:
            return wire.error_response(400, "malformed", "direct payloads use /truffle/transfer")
        try:
            self.buffer.announce(key)
        except BufferConflict as exc:
            return wire.error_response(409, "conflict", str(exc))
        self.engine.prefetch_async(storage, None, key, self.buffer)
        return wire.Response(202, b"accepted")

    # -- lifecycle -------------------------------------------------------

    def serve(self) -> str:
        """Listen on ``config.listen_addr`` over HTTP; returns the bound address."""
        self._server, bound = wire.serve_http(self.handle, self.config.listen_addr)
        self.address = bound
        return bound

    def close(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
