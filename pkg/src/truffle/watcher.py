"""Tracks where functions run, fed by orchestrator lifecycle events.

The watcher answers two questions: is a function already live (so the
sidecar can stay out of the way), and on which host did the scheduler just
place it (so data can start moving during the cold start).
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from truffle.errors import SchedulingTimeout


class EventKind(str, enum.Enum):
    SCHEDULED = "scheduled"
    RUNNING = "running"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class SchedulingEvent:
    function_name: str
    host_address: str
    kind: EventKind
    at: float = field(default_factory=time.monotonic)


# allowed previous state for each incoming event kind
_ALLOWED_FROM = {
    EventKind.SCHEDULED: {None, EventKind.TERMINATED},
    EventKind.RUNNING: {EventKind.SCHEDULED},
    EventKind.TERMINATED: {EventKind.SCHEDULED, EventKind.RUNNING},
}


class EventSource(Protocol):
    def subscribe(self, callback: Callable[[SchedulingEvent], None]) -> None: ...


class _Waiter:
    __slots__ = ("function_name", "host", "done")

    def __init__(self, function_name: str):
        self.function_name = function_name
        self.host: Optional[str] = None
        self.done = threading.Event()


class Watcher:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._state: dict[str, EventKind] = {}
        self._hosts: dict[str, str] = {}
        self._waiters: list[_Waiter] = []
        self.rejected = 0
        self.history: list[SchedulingEvent] = []

    def attach(self, source: EventSource) -> "Watcher":
        source.subscribe(self.ingest_event)
        return self

    def ingest_event(self, event: SchedulingEvent) -> bool:
        """Fold ``event`` into the registry and wake matching waiters.

        Out-of-order events are dropped and counted in ``rejected``;
        returns whether the event was accepted.
        """
        kind = EventKind(event.kind)
        with self._lock:
            previous = self._state.get(event.function_name)
            live_event = kind in (EventKind.SCHEDULED, EventKind.RUNNING)
            if previous not in _ALLOWED_FROM[kind] or (live_event and not event.host_address):
                self.rejected += 1
                return False
            self._state[event.function_name] = kind
            self.history.append(event)
            if live_event:
                self._hosts[event.function_name] = event.host_address
                remaining = []
                for waiter in self._waiters:
                    if waiter.function_name == event.function_name:
                        waiter.host = event.host_address
                        waiter.done.set()
                    else:
                        remaining.append(waiter)
                self._waiters = remaining
            else:
                self._hosts.pop(event.function_name, None)
            return True

    def is_running(self, function_name: str) -> bool:
        with self._lock:
            return self._state.get(function_name) in (EventKind.SCHEDULED, EventKind.RUNNING)

    def host_of(self, function_name: str) -> Optional[str]:
        with self._lock:
            return self._hosts.get(function_name)

    def wait_for_host(self, target_function: str, timeout_ms: float) -> str:
        """Block until ``target_function`` has a host and return its address.

        Returns at once if the function is already live; otherwise resolves on
        the first scheduled or running event for it.
        """
        with self._lock:
            host = self._hosts.get(target_function)
            if host is not None:
                return host
            waiter = _Waiter(target_function)
            self._waiters.append(waiter)
        if waiter.done.wait(timeout_ms / 1000.0):
            return waiter.host  # type: ignore[return-value]
        with self._lock:
            if waiter.done.is_set():  # raced with ingest_event
                return waiter.host  # type: ignore[return-value]
            self._waiters.remove(waiter)
        raise SchedulingTimeout(f"no host for {target_function!r} within {timeout_ms} ms")

    @property
    def pending_waiters(self) -> int:
        with self._lock:
            return len(self._waiters)


class EventBus:
    """In-process fan-out of scheduling events to every subscriber."""

    def __init__(self) -> None:
        self._subscribers: list[Callable[[SchedulingEvent], None]] = []
        self._lock = threading.Lock()

    def subscribe(self, callback: Callable[[SchedulingEvent], None]) -> None:
        with self._lock:
            self._subscribers.append(callback)

    def publish(self, event: SchedulingEvent) -> None:
        with self._lock:
            subscribers = list(self._subscribers)
        for callback in subscribers:
            callback(event)
