"""In-process loopback network between simulated nodes and services."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Mapping, Optional

from truffle import wire
from truffle.errors import GatewayTimeout, TransportError
from truffle.sim.clock import SimClock

MIB = 1 << 20


@dataclass(frozen=True)
class LatencyProfile:
    """Linear latency: a fixed per-request cost plus a per-MiB cost, in model ms."""

    base_ms: float = 0.0
    per_mb_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.base_ms < 0 or self.per_mb_ms < 0:
            raise ValueError("latency profile values must be >= 0")

    def cost_ms(self, size_bytes: int) -> float:
        return self.base_ms + self.per_mb_ms * size_bytes / MIB


@dataclass
class _Endpoint:
    handler: wire.Handler
    node: Optional[str]


class LocalNetwork:
    """Routes requests to registered handlers by address.

    Requests between two different nodes pay the ``link`` profile on the
    request body before the handler runs. Services not bound to a node
    (platform, storage backends) carry their own latency.
    """

    def __init__(self, clock: SimClock, link: LatencyProfile = LatencyProfile()):
        self.clock = clock
        self.link = link
        self._endpoints: dict[str, _Endpoint] = {}
        self._lock = threading.Lock()

    def register(self, address: str, handler: wire.Handler, node: Optional[str] = None) -> None:
        with self._lock:
            self._endpoints[address] = _Endpoint(handler, node)

    def unregister(self, address: str) -> None:
        with self._lock:
            self._endpoints.pop(address, None)

    def node_of(self, address: str) -> Optional[str]:
        with self._lock:
            ep = self._endpoints.get(address)
        return ep.node if ep else None

    def transport(self, origin_node: Optional[str] = None) -> "LoopbackTransport":
        return LoopbackTransport(self, origin_node)


class LoopbackTransport:
    def __init__(self, network: LocalNetwork, origin_node: Optional[str]):
        self.network = network
        self.origin_node = origin_node

    def request(
        self,
        address: str,
        method: str,
        path: str,
        headers: Optional[Mapping[str, str]] = None,
        body: bytes = b"",
        timeout_ms: Optional[float] = None,
    ) -> wire.Response:
        with self.network._lock:
            ep = self.network._endpoints.get(address)
        if ep is None:
            raise TransportError(f"connection refused: {address}")
        req = wire.Request(method, path, dict(headers or {}), body)

        def call() -> wire.Response:
            if self.origin_node is not None and ep.node is not None and ep.node != self.origin_node:
                self.network.clock.sleep(self.network.link.cost_ms(len(body)))
            return ep.handler(req)

        if timeout_ms is None:
            return call()
        box: list = []

        def run() -> None:
            try:
                box.append(call())
            except BaseException as exc:  # re-raised in the caller
                box.append(exc)

        t = threading.Thread(target=run, name=f"rpc-{address}", daemon=True)
        t.start()
        t.join(timeout_ms / 1000.0)
        if not box:
            raise GatewayTimeout(f"{method} {address}{path} timed out after {timeout_ms} ms")
        if isinstance(box[0], BaseException):
            raise box[0]
        return box[0]
