"""In-memory object store and key-value store with injected latency.

Both speak the storage wire routes used by the data engine::

    GET|PUT /kvs/{key}
    GET|PUT /os/{bucket}/{object}

Every request sleeps ``base_ms + per_mb_ms * size`` (model ms) before it is
answered, where size is the payload moved by that request.
"""

from __future__ import annotations

import threading
from typing import Iterable, Optional

from truffle import wire
from truffle.sim.clock import SimClock
from truffle.sim.network import MIB, LatencyProfile

BackendLatencyProfile = LatencyProfile

# Fitted so a 128 MiB transfer matches the measured per-storage transfer times
# (1291 ms direct, 1584 ms KVS, ~2481 ms S3).
DIRECT_LINK = LatencyProfile(base_ms=3.0, per_mb_ms=10.0625)
KVS = LatencyProfile(base_ms=8.0, per_mb_ms=12.3125)
OBJECT_STORE = LatencyProfile(base_ms=34.0, per_mb_ms=19.1)
# Local buffer read: a memory copy on the function's node.
BUFFER_READ = LatencyProfile(base_ms=1.0, per_mb_ms=0.2)
# Slower S3 path from the cold-start-delay sweep, where a 100 MB input took
# ~5.9 s to fetch (calibrated from the flat part of the S3 sweep curve).
OBJECT_STORE_WAN = LatencyProfile(base_ms=34.0, per_mb_ms=58.3)

PROFILES = {
    "direct": DIRECT_LINK,
    "kvs": KVS,
    "object_store": OBJECT_STORE,
    "object_store_wan": OBJECT_STORE_WAN,
    "buffer_read": BUFFER_READ,
}


def backend_serve(clock: SimClock, profile: LatencyProfile, operation: str, size_mb: float) -> float:
    """Apply the latency of one ``operation`` (``get``/``put``) moving ``size_mb`` MiB.

    Returns the model milliseconds slept.
    """
    if operation not in ("get", "put"):
        raise ValueError(f"unknown operation {operation!r}")
    cost = profile.cost_ms(int(size_mb * MIB))
    clock.sleep(cost)
    return cost


class _Store:
    def __init__(self, clock: SimClock, profile: LatencyProfile, tokens: Iterable[str] = ()):
        self.clock = clock
        self.profile = profile
        self.tokens = set(tokens)
        self._lock = threading.Lock()
        self.requests = 0

    def _authorized(self, req: wire.Request) -> bool:
        if not self.tokens:
            return True
        auth = req.header("Authorization") or ""
        scheme, _, token = auth.partition(" ")
        return scheme == "Bearer" and token in self.tokens

    def _delay(self, size_bytes: int) -> None:
        with self._lock:
            self.requests += 1
        self.clock.sleep(self.profile.cost_ms(size_bytes))


class KvsServer(_Store):
    def __init__(self, clock, profile=KVS, tokens=()):
        super().__init__(clock, profile, tokens)
        self._data: dict[str, bytes] = {}

    def seed(self, key: str, value: bytes) -> None:
        """Store without latency; for staging inputs outside a measurement."""
        with self._lock:
            self._data[key] = bytes(value)

    def get(self, key: str) -> Optional[bytes]:
        with self._lock:
            return self._data.get(key)

    def __call__(self, req: wire.Request) -> wire.Response:
        parts = wire.split_path(req.path)
        if len(parts) != 2 or parts[0] != "kvs":
            return wire.error_response(404, "no_route", req.path)
        key = parts[1]
        if not self._authorized(req):
            self._delay(0)
            return wire.error_response(403, "AuthFailure", key)
        if req.method == "PUT":
            self._delay(len(req.body))
            self.seed(key, req.body)
            return wire.Response(200, b"")
        if req.method == "GET":
            value = self.get(key)
            if value is None:
                self._delay(0)
                return wire.error_response(404, "NoSuchKey", key)
            self._delay(len(value))
            return wire.Response(200, value)
        return wire.error_response(405, "method_not_allowed", req.method)


class ObjectStoreServer(_Store):
    def __init__(self, clock, profile=OBJECT_STORE, tokens=()):
        super().__init__(clock, profile, tokens)
        self._buckets: dict[str, dict[str, bytes]] = {}

    def seed(self, bucket: str, object_id: str, value: bytes) -> None:
        with self._lock:
            self._buckets.setdefault(bucket, {})[object_id] = bytes(value)

    def __call__(self, req: wire.Request) -> wire.Response:
        parts = wire.split_path(req.path)
        if len(parts) != 3 or parts[0] != "os":
            return wire.error_response(404, "no_route", req.path)
        _, bucket, object_id = parts
        if not self._authorized(req):
            self._delay(0)
            return wire.error_response(403, "AuthFailure", f"{bucket}/{object_id}")
        if req.method == "PUT":
            self._delay(len(req.body))
            self.seed(bucket, object_id, req.body)
            return wire.Response(200, b"")
        if req.method != "GET":
            return wire.error_response(405, "method_not_allowed", req.method)
        with self._lock:
            objects = self._buckets.get(bucket)
            value = None if objects is None else objects.get(object_id)
        if objects is None:
            self._delay(0)
            return wire.error_response(404, "NoSuchBucket", bucket)
        if value is None:
            self._delay(0)
            return wire.error_response(404, "NoSuchObject", f"{bucket}/{object_id}")
        self._delay(len(value))
        return wire.Response(200, value)
