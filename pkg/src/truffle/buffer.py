"""Node-local rendezvous store for payloads waiting on a function to start.

Writers (the data engine, or a peer sidecar) park bytes under a reference
key; the co-located function redeems the key exactly once. ``take`` may be
called before the writer shows up and blocks until the entry is ready, has
failed, or the timeout expires.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from truffle.errors import (
    BufferCapacityError,
    BufferConflict,
    BufferNotFound,
    BufferTimeout,
    FetchFailed,
)

DEFAULT_CAPACITY = 1 << 30
DEFAULT_TAKE_TIMEOUT_MS = 30_000


class EntryState(str, enum.Enum):
    PENDING = "pending"
    READY = "ready"
    FAILED = "failed"


@dataclass
class BufferEntry:
    key: str
    created_at: float
    state: EntryState = EntryState.PENDING
    payload: bytes = b""
    error: str = ""

    @property
    def size_bytes(self) -> int:
        return len(self.payload)


@dataclass
class Buffer:
    """Thread-safe, read-once keyed byte store with a byte capacity."""

    capacity_bytes: int = DEFAULT_CAPACITY
    default_timeout_ms: float = DEFAULT_TAKE_TIMEOUT_MS
    clock: Callable[[], float] = time.monotonic
    name: str = "default"

    _entries: dict[str, BufferEntry] = field(default_factory=dict, init=False, repr=False)
    # keys already redeemed, with the time they were taken
    _taken: dict[str, float] = field(default_factory=dict, init=False, repr=False)
    _resident: int = field(default=0, init=False, repr=False)
    _cond: threading.Condition = field(default_factory=threading.Condition, init=False, repr=False)

    def announce(self, key: str) -> None:
        with self._cond:
            if key in self._entries:
                raise BufferConflict(f"key {key!r} already present")
            self._taken.pop(key, None)
            self._entries[key] = BufferEntry(key=key, created_at=self.clock())

    def put(self, key: str, payload: bytes) -> None:
        payload = bytes(payload)
        with self._cond:
            entry = self._entries.get(key)
            if entry is not None and entry.state is not EntryState.PENDING:
                raise BufferConflict(f"key {key!r} is already {entry.state.value}")
            if self._resident + len(payload) > self.capacity_bytes:
                raise BufferCapacityError(
                    f"{len(payload)} bytes would exceed capacity "
                    f"({self._resident}/{self.capacity_bytes} resident)"
                )
            if entry is None:
                entry = BufferEntry(key=key, created_at=self.clock())
                self._entries[key] = entry
                self._taken.pop(key, None)
            entry.payload = payload
            entry.state = EntryState.READY
            self._resident += len(payload)
            self._cond.notify_all()

    def fail(self, key: str, reason: str) -> None:
        """Poison ``key`` so blocked and future readers get :class:`FetchFailed`."""
        with self._cond:
            entry = self._entries.get(key)
            if entry is None:
                entry = BufferEntry(key=key, created_at=self.clock())
                self._entries[key] = entry
            elif entry.state is EntryState.READY:
                raise BufferConflict(f"key {key!r} is already ready")
            entry.state = EntryState.FAILED
            entry.error = reason
            self._cond.notify_all()

    def take(self, key: str, timeout_ms: Optional[float] = None) -> bytes:
        if timeout_ms is None:
            timeout_ms = self.default_timeout_ms
        deadline = time.monotonic() + timeout_ms / 1000.0
        with self._cond:
            while True:
                entry = self._entries.get(key)
                if entry is not None and entry.state is not EntryState.PENDING:
                    del self._entries[key]
                    self._taken[key] = self.clock()
                    if entry.state is EntryState.FAILED:
                        raise FetchFailed(entry.error or f"fetch for {key!r} failed")
                    self._resident -= entry.size_bytes
                    return entry.payload
                if entry is None and key in self._taken:
                    raise BufferNotFound(f"key {key!r} was already taken")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BufferTimeout(f"key {key!r} not ready after {timeout_ms} ms")
                self._cond.wait(remaining)

    def discard(self, key: str) -> bool:
        """Drop an entry without reading it. Returns whether one existed."""
        with self._cond:
            entry = self._entries.pop(key, None)
            if entry is None:
                return False
            self._resident -= entry.size_bytes
            self._cond.notify_all()
            return True

    def clear(self) -> None:
        with self._cond:
            self._entries.clear()
            self._taken.clear()
            self._resident = 0
            self._cond.notify_all()

    def status(self, key: str) -> Optional[EntryState]:
        with self._cond:
            entry = self._entries.get(key)
            return entry.state if entry else None

    def evict_expired(self, max_age_ms: float) -> int:
        if max_age_ms <= 0:
            raise ValueError("max_age_ms must be > 0")
        now = self.clock()
        cutoff = max_age_ms / 1000.0
        with self._cond:
            expired = [k for k, e in self._entries.items() if now - e.created_at > cutoff]
            for key in expired:
                self._resident -= self._entries.pop(key).size_bytes
            for key in [k for k, t in self._taken.items() if now - t > cutoff]:
                del self._taken[key]
            return len(expired)

    @property
    def resident_bytes(self) -> int:
        with self._cond:
            return self._resident

    def __len__(self) -> int:
        with self._cond:
            return len(self._entries)

    def __contains__(self, key: str) -> bool:
        with self._cond:
            return key in self._entries
