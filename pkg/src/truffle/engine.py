"""Storage-aware input fetching.

The engine looks at where a function's input lives, picks the adapter for
that storage kind, pulls the bytes and parks them in the node buffer under
the invocation's reference key. A failed fetch poisons the key so the
waiting function fails fast instead of timing out.
"""

from __future__ import annotations

import enum
import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from truffle import wire
from truffle.buffer import Buffer, EntryState
from truffle.errors import (
    AuthFailure,
    BufferConflict,
    NoSuchBucket,
    NoSuchKey,
    NoSuchObject,
    StorageError,
    TransportError,
    UnsupportedStorage,
)

log = logging.getLogger(__name__)


class StorageKind(str, enum.Enum):
    DIRECT = "direct"
    OBJECT_STORE = "object_store"
    KVS = "kvs"


@dataclass(frozen=True)
class StorageDescriptor:
    """Where an input lives.

    ``kind`` is kept as given (possibly a raw string from the wire) so that
    malformed kinds fail at adapter resolution rather than at parse time.
    """

    kind: Union[StorageKind, str]
    bucket: str = ""
    object_id: str = ""
    key: str = ""
    endpoint: Optional[str] = None
    credentials_ref: Optional[str] = None

    @classmethod
    def direct(cls) -> "StorageDescriptor":
        return cls(StorageKind.DIRECT)

    @classmethod
    def kvs(cls, endpoint: str, key: str, credentials_ref: Optional[str] = None) -> "StorageDescriptor":
        return cls(StorageKind.KVS, key=key, endpoint=endpoint, credentials_ref=credentials_ref)

    @classmethod
    def object_store(
        cls, endpoint: str, bucket: str, object_id: str, credentials_ref: Optional[str] = None
    ) -> "StorageDescriptor":
        return cls(
            StorageKind.OBJECT_STORE,
            bucket=bucket,
            object_id=object_id,
            endpoint=endpoint,
            credentials_ref=credentials_ref,
        )

    @property
    def locator(self) -> Optional[str]:
        if self.kind == StorageKind.OBJECT_STORE:
            return f"{self.bucket}/{self.object_id}"
        if self.kind == StorageKind.KVS:
            return self.key
        return None

    def validate(self) -> None:
        """Raise ``ValueError`` if the kind-specific fields are inconsistent."""
        kind = self.kind
        if kind == StorageKind.DIRECT:
            if self.endpoint or self.bucket or self.object_id or self.key:
                raise ValueError("direct storage takes no endpoint or locator")
        elif kind == StorageKind.OBJECT_STORE:
            if not (self.bucket and self.object_id):
                raise ValueError("object_store needs a bucket and an object id")
            if not self.endpoint:
                raise ValueError("object_store needs an endpoint")
        elif kind == StorageKind.KVS:
            if not self.key:
                raise ValueError("kvs needs a key")
            if not self.endpoint:
                raise ValueError("kvs needs an endpoint")
        else:
            raise UnsupportedStorage(f"unknown storage kind {kind!r}")

    def to_headers(self) -> dict[str, str]:
        kind = self.kind.value if isinstance(self.kind, StorageKind) else str(self.kind)
        headers = {wire.H_KIND: kind}
        if self.locator is not None:
            headers[wire.H_LOCATOR] = self.locator
        if self.endpoint:
            headers[wire.H_ENDPOINT] = self.endpoint
        if self.credentials_ref:
            headers[wire.H_CREDENTIALS] = self.credentials_ref
        return headers

    @classmethod
    def from_headers(cls, get) -> "StorageDescriptor":
        """Decode from a header getter such as ``Request.header``.

        Missing kind means direct. Unknown kinds are carried through as strings.
        """
        raw = (get(wire.H_KIND) or StorageKind.DIRECT.value).strip()
        try:
            kind: Union[StorageKind, str] = StorageKind(raw)
        except ValueError:
            kind = raw
        locator = get(wire.H_LOCATOR) or ""
        endpoint = get(wire.H_ENDPOINT) or None
        creds = get(wire.H_CREDENTIALS) or None
        if kind == StorageKind.OBJECT_STORE:
            bucket, _, object_id = locator.partition("/")
            return cls(kind, bucket=bucket, object_id=object_id, endpoint=endpoint, credentials_ref=creds)
        if kind == StorageKind.KVS:
            return cls(kind, key=locator, endpoint=endpoint, credentials_ref=creds)
        return cls(kind, endpoint=endpoint, credentials_ref=creds)


def raise_for_storage(resp: wire.Response, what: str) -> None:
    if resp.ok:
        return
    code = resp.error or ""
    errors = {
        "NoSuchBucket": NoSuchBucket,
        "NoSuchObject": NoSuchObject,
        "NoSuchKey": NoSuchKey,
        "AuthFailure": AuthFailure,
    }
    if code in errors:
        raise errors[code](what)
    if resp.status in (401, 403):
        raise AuthFailure(what)
    raise StorageError(f"{what}: HTTP {resp.status} {code}".strip())


@dataclass
class StorageClient:
    """Thin client for the object-store and KVS wire routes."""

    transport: wire.Transport
    credentials: Mapping[str, str] = field(default_factory=dict)
    timeout_ms: Optional[float] = None

    def _auth(self, credentials_ref: Optional[str]) -> dict[str, str]:
        secret = self.credentials.get(credentials_ref) if credentials_ref else None
        return {"Authorization": f"Bearer {secret}"} if secret else {}

    def _call(self, endpoint: str, method: str, path: str, headers: dict, body: bytes = b"") -> wire.Response:
        try:
            return self.transport.request(endpoint, method, path, headers, body, self.timeout_ms)
        except TransportError as exc:
            raise StorageError(f"{endpoint} unreachable: {exc}") from exc

    def fetch_object(self, endpoint: str, bucket: str, object_id: str, credentials_ref: Optional[str] = None) -> bytes:
        path = f"/os/{wire.path_segment(bucket)}/{wire.path_segment(object_id)}"
        resp = self._call(endpoint, "GET", path, self._auth(credentials_ref))
        raise_for_storage(resp, f"{bucket}/{object_id}")
        return resp.body

    def put_object(self, endpoint: str, bucket: str, object_id: str, payload: bytes,
                   credentials_ref: Optional[str] = None) -> None:
        path = f"/os/{wire.path_segment(bucket)}/{wire.path_segment(object_id)}"
        resp = self._call(endpoint, "PUT", path, self._auth(credentials_ref), payload)
        raise_for_storage(resp, f"{bucket}/{object_id}")

    def fetch_kvs(self, endpoint: str, key: str, credentials_ref: Optional[str] = None) -> bytes:
        resp = self._call(endpoint, "GET", f"/kvs/{wire.path_segment(key)}", self._auth(credentials_ref))
        raise_for_storage(resp, key)
        return resp.body

    def put_kvs(self, endpoint: str, key: str, payload: bytes, credentials_ref: Optional[str] = None) -> None:
        resp = self._call(endpoint, "PUT", f"/kvs/{wire.path_segment(key)}", self._auth(credentials_ref), payload)
        raise_for_storage(resp, key)

    def fetch(self, descriptor: StorageDescriptor) -> bytes:
        if descriptor.kind == StorageKind.OBJECT_STORE:
            if not descriptor.object_id:
                raise NoSuchObject(f"{descriptor.bucket}/<missing object id>")
            return self.fetch_object(descriptor.endpoint or "", descriptor.bucket, descriptor.object_id,
                                     descriptor.credentials_ref)
        if descriptor.kind == StorageKind.KVS:
            if not descriptor.key:
                raise NoSuchKey("<missing key>")
            return self.fetch_kvs(descriptor.endpoint or "", descriptor.key, descriptor.credentials_ref)
        raise UnsupportedStorage(f"cannot fetch kind {descriptor.kind!r}")

    def store(self, descriptor: StorageDescriptor, payload: bytes) -> None:
        if descriptor.kind == StorageKind.OBJECT_STORE:
            self.put_object(descriptor.endpoint or "", descriptor.bucket, descriptor.object_id, payload,
                            descriptor.credentials_ref)
        elif descriptor.kind == StorageKind.KVS:
            self.put_kvs(descriptor.endpoint or "", descriptor.key, payload, descriptor.credentials_ref)
        else:
            raise UnsupportedStorage(f"cannot store kind {descriptor.kind!r}")


class StorageAdapter(ABC):
    kind: StorageKind

    @abstractmethod
    def fetch(self, descriptor: StorageDescriptor, inline_payload: Optional[bytes] = None) -> bytes: ...


class DirectAdapter(StorageAdapter):
    """Input travels in the request body itself."""

    kind = StorageKind.DIRECT

    def fetch(self, descriptor, inline_payload=None):
        if inline_payload is None:
            raise StorageError("direct input without an inline payload")
        return inline_payload


class ObjectStoreAdapter(StorageAdapter):
    kind = StorageKind.OBJECT_STORE

    def __init__(self, client: StorageClient):
        self.client = client

    def fetch(self, descriptor, inline_payload=None):
        return self.client.fetch(descriptor)


class KvsAdapter(StorageAdapter):
    kind = StorageKind.KVS

    def __init__(self, client: StorageClient):
        self.client = client

    def fetch(self, descriptor, inline_payload=None):
        return self.client.fetch(descriptor)


class AdapterRegistry:
    """At most one adapter per storage kind."""

    def __init__(self, adapters=()):
        self._adapters: dict[StorageKind, StorageAdapter] = {}
        for adapter in adapters:
            self.register(adapter)

    def register(self, adapter: StorageAdapter, replace: bool = False) -> None:
        if adapter.kind in self._adapters and not replace:
            raise ValueError(f"adapter for {adapter.kind.value} already registered")
        self._adapters[adapter.kind] = adapter

    def resolve(self, kind) -> StorageAdapter:
        try:
            adapter = self._adapters.get(StorageKind(kind))
        except ValueError:
            adapter = None
        if adapter is None:
            raise UnsupportedStorage(f"no adapter for storage kind {kind!r}")
        return adapter

    def kinds(self) -> set[StorageKind]:
        return set(self._adapters)


class DataEngine:
    def __init__(self, transport: wire.Transport, credentials: Optional[Mapping[str, str]] = None,
                 timeout_ms: Optional[float] = None):
        self.client = StorageClient(transport, dict(credentials or {}), timeout_ms)
        self.registry = AdapterRegistry(
            [DirectAdapter(), ObjectStoreAdapter(self.client), KvsAdapter(self.client)]
        )

    def resolve_adapter(self, descriptor: StorageDescriptor) -> StorageAdapter:
        return self.registry.resolve(descriptor.kind)

    def fetch_object(self, endpoint, bucket, object_id, credentials_ref=None) -> bytes:
        return self.client.fetch_object(endpoint, bucket, object_id, credentials_ref)

    def fetch_kvs(self, endpoint, key, credentials_ref=None) -> bytes:
        return self.client.fetch_kvs(endpoint, key, credentials_ref)

    def prefetch(self, descriptor: StorageDescriptor, inline_payload: Optional[bytes], key: str,
                 buffer: Buffer) -> None:
        """Fetch the input and park it in ``buffer`` under ``key``; poison the key on failure."""
        try:
            adapter = self.resolve_adapter(descriptor)
            content = adapter.fetch(descriptor, inline_payload)
            buffer.put(key, content)
        except Exception as exc:
            log.warning("prefetch of %s failed: %s", key, exc)
            if buffer.status(key) is not EntryState.READY:
                try:
                    buffer.fail(key, f"{type(exc).__name__}: {exc}")
                except BufferConflict:
                    pass

    def prefetch_async(self, descriptor, inline_payload, key, buffer) -> threading.Thread:
        t = threading.Thread(target=self.prefetch, args=(descriptor, inline_payload, key, buffer),
                             name=f"prefetch-{key[:8]}", daemon=True)
        t.start()
        return t
