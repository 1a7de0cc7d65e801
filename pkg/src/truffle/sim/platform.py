"""Stand-in for the serverless platform and its orchestrator.

One instance per function, scaled from zero on the first request. Scaling
takes ``scheduling_ms`` until the scheduler places the function (a
``scheduled`` event naming the host's sidecar), then the cold start until a
``running`` event. Requests wait in the activator until the instance runs
and are then handed to the function runtime on its node.
"""

from __future__ import annotations

import enum
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from truffle import wire
from truffle.sim.clock import SimClock
from truffle.watcher import EventBus, EventKind, SchedulingEvent

log = logging.getLogger(__name__)


class InstanceState(str, enum.Enum):
    IDLE = "idle"
    SCALING = "scaling"
    RUNNING = "running"


@dataclass
class FunctionInstance:
    name: str
    node: str
    host: str  # sidecar address of the node, as announced in events
    cold_start_ms: float
    scheduling_ms: float
    state: InstanceState = InstanceState.IDLE
    running: threading.Event = field(default_factory=threading.Event)
    scaler: Optional[threading.Thread] = None


Deliver = Callable[[str, wire.Request], wire.Response]
PhaseHook = Callable[[str, str, float], None]


class Platform:
    def __init__(self, clock: SimClock, bus: EventBus, deliver: Deliver,
                 activation_timeout_ms: float = 600_000, on_phase: Optional[PhaseHook] = None):
        self.clock = clock
        self.bus = bus
        self.deliver = deliver
        self.activation_timeout_ms = activation_timeout_ms
        self.on_phase = on_phase or (lambda fn, phase, t: None)
        self.instances: dict[str, FunctionInstance] = {}
        self._lock = threading.Lock()

    def deploy(self, name: str, node: str, host: str, cold_start_ms: float, scheduling_ms: float) -> None:
        with self._lock:
            self.instances[name] = FunctionInstance(name, node, host, cold_start_ms, scheduling_ms)

    def set_cold_start(self, name: str, cold_start_ms: float) -> None:
        with self._lock:
            self.instances[name].cold_start_ms = cold_start_ms

    def _publish(self, inst: FunctionInstance, kind: EventKind) -> SchedulingEvent:
        event = SchedulingEvent(inst.name, inst.host, kind, self.clock.now_ms())
        self.bus.publish(event)
        return event

    def scheduler_tick(self, name: str) -> list[SchedulingEvent]:
        """Place ``name`` and cold-start it, emitting the lifecycle events."""
        inst = self.instances[name]
        events = []
        self.clock.sleep(inst.scheduling_ms)
        events.append(self._publish(inst, EventKind.SCHEDULED))
        self.on_phase(name, "scheduled", self.clock.now_ms())
        self.clock.sleep(inst.cold_start_ms)
        with self._lock:
            inst.state = InstanceState.RUNNING
        events.append(self._publish(inst, EventKind.RUNNING))
        self.on_phase(name, "cold_start_end", self.clock.now_ms())
        inst.running.set()
        return events

    def ensure_started(self, name: str) -> FunctionInstance:
        with self._lock:
            inst = self.instances[name]
            if inst.state is InstanceState.IDLE:
                inst.state = InstanceState.SCALING
                inst.scaler = threading.Thread(target=self.scheduler_tick, args=(name,),
                                               name=f"scale-{name}", daemon=True)
                inst.scaler.start()
        return inst

    def scale_to_zero(self) -> None:
        """Terminate every instance so the next request is a cold start."""
        for inst in list(self.instances.values()):
            if inst.scaler is not None:
                inst.scaler.join()
            with self._lock:
                was_live = inst.state is InstanceState.RUNNING
                inst.state = InstanceState.IDLE
                inst.running.clear()
                inst.scaler = None
            if was_live:
                self._publish(inst, EventKind.TERMINATED)

    def is_running(self, name: str) -> bool:
        with self._lock:
            inst = self.instances.get(name)
            return inst is not None and inst.state is InstanceState.RUNNING

    def __call__(self, req: wire.Request) -> wire.Response:
        if req.method != "POST" or wire.split_path(req.path) != ["invoke"]:
            return wire.error_response(404, "no_route", req.path)
        name = req.header(wire.H_TARGET) or ""
        if name not in self.instances:
            return wire.error_response(404, "unknown_function", name)
        self.on_phase(name, "invoke_received", self.clock.now_ms())
        inst = self.ensure_started(name)
        if not inst.running.wait(self.clock.to_real_ms(self.activation_timeout_ms) / 1000.0):
            return wire.error_response(504, "activation_timeout", name)
        return self.deliver(name, req)
