"""A desk-scale serverless cluster built around real sidecar instances.

Each node runs a :class:`~truffle.proxy.Sidecar` and a function runtime;
a shared platform scales functions from zero and announces placements on
an event bus that every sidecar's watcher follows. Storage backends and
the node-to-node link carry injected latency. Everything runs in real
threads with real sleeps scaled by the clock's factor, and every
measurement is reported in model milliseconds.
"""

from __future__ import annotations

import enum
import logging
import math
import threading
import uuid
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from truffle import model, wire
from truffle.engine import StorageClient, StorageDescriptor, StorageKind
from truffle.errors import ConfigError, StorageError
from truffle.proxy import Sidecar, SidecarConfig
from truffle.sim import backends
from truffle.sim.clock import SimClock
from truffle.sim.network import MIB, LatencyProfile, LocalNetwork, LoopbackTransport
from truffle.sim.platform import Platform
from truffle.sim.workflow import WorkflowSpec
from truffle.watcher import EventBus, Watcher

log = logging.getLogger(__name__)

PLATFORM_ADDR = "platform:8080"
KVS_ADDR = "kvs:6379"
OBJECT_STORE_ADDR = "s3:9000"
BUCKET = "workflow"
H_ORIGIN = "X-Sim-Origin-Node"
H_CALLER = "X-Sim-Caller"


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    TRUFFLE = "truffle"


@dataclass
class MeasurementRecord:
    """Phase trace of one workflow invocation; times are model ms since the source emitted."""

    trace_id: str
    mode: Mode
    workload: str = ""
    storage_kind: str = ""
    size_mb: float = 0.0
    added_delay_ms: float = 0.0
    phases: dict[str, dict[str, float]] = field(default_factory=dict)
    io_ms: dict[str, float] = field(default_factory=dict)
    triggered_by: dict[str, str] = field(default_factory=dict)
    critical_path: list[str] = field(default_factory=list)
    end_to_end_ms: float = math.nan
    io_critical_path_ms: float = math.nan
    predicted_ms: float = math.nan
    failed: bool = False
    failure: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = Mode(self.mode).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementRecord":
        known = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in known}
        d["mode"] = Mode(d["mode"])
        return cls(**d)


@dataclass
class ClusterProfiles:
    link: LatencyProfile = backends.DIRECT_LINK
    kvs: LatencyProfile = backends.KVS
    object_store: LatencyProfile = backends.OBJECT_STORE
    buffer_read: LatencyProfile = backends.BUFFER_READ

    def for_kind(self, kind: StorageKind) -> LatencyProfile:
        return {
            StorageKind.DIRECT: self.link,
            StorageKind.KVS: self.kvs,
            StorageKind.OBJECT_STORE: self.object_store,
        }[StorageKind(kind)]


@dataclass
class Node:
    name: str
    address: str
    sidecar: Sidecar
    transport: LoopbackTransport
    storage: StorageClient


class _Active:
    """Mutable state of the invocation in flight."""

    def __init__(self, record: MeasurementRecord, origin_ms: float):
        self.record = record
        self.origin_ms = origin_ms
        self.lock = threading.Lock()
        self.arrivals: dict[str, int] = {}


class Cluster:
    def __init__(
        self,
        workflow: WorkflowSpec,
        nodes: int,
        scale: float = 1.0,
        profiles: Optional[ClusterProfiles] = None,
        scheduling_ms: float = 20.0,
        stage_timeout_ms: float = 120_000.0,
        capture_inputs: bool = False,
    ):
        self.workflow = workflow
        self.clock = SimClock(scale)
        self.profiles = profiles or ClusterProfiles()
        self.scheduling_ms = scheduling_ms
        self.stage_timeout_ms = stage_timeout_ms
        self.capture_inputs = capture_inputs
        self.captured: dict[str, list[bytes]] = {}
        self.network = LocalNetwork(self.clock, self.profiles.link)
        self.bus = EventBus()
        self.kvs = backends.KvsServer(self.clock, self.profiles.kvs)
        self.object_store = backends.ObjectStoreServer(self.clock, self.profiles.object_store)
        self.network.register(KVS_ADDR, self.kvs)
        self.network.register(OBJECT_STORE_ADDR, self.object_store)
        self.platform = Platform(self.clock, self.bus, self._run_function,
                                 activation_timeout_ms=stage_timeout_ms, on_phase=self._on_phase)
        self.network.register(PLATFORM_ADDR, self.platform)

        real_timeout = self.clock.to_real_ms(stage_timeout_ms)
        self.nodes: list[Node] = []
        for i in range(nodes):
            name, address = f"node-{i}", f"node-{i}:7070"
            transport = self.network.transport(name)
            config = SidecarConfig(listen_addr=address, platform_addr=PLATFORM_ADDR,
                                   buffer_timeout_ms=real_timeout, forward_timeout_ms=real_timeout,
                                   schedule_timeout_ms=real_timeout)
            sidecar = Sidecar(config, transport, Watcher().attach(self.bus), clock=self.clock.now_ms)
            self.network.register(address, sidecar, node=name)
            self.nodes.append(Node(name, address, sidecar, transport, StorageClient(transport)))

        self._placement: dict[str, Node] = {}
        self._active: Optional[_Active] = None
        self._invoke_lock = threading.Lock()

    # -- deployment ------------------------------------------------------

    def _deploy(self) -> None:
        wf = self.workflow
        placements = {f.placement for f in wf.functions if f.placement is not None}
        if len(self.nodes) < len(placements):
            raise ConfigError(f"{len(placements)} distinct placements need at least as many nodes, "
                              f"got {len(self.nodes)}")
        for i, f in enumerate(wf.functions):
            idx = f.placement if f.placement is not None else i % len(self.nodes)
            if not 0 <= idx < len(self.nodes):
                raise ConfigError(f"{f.name}: placement {idx} outside 0..{len(self.nodes) - 1}")
            node = self.nodes[idx]
            self._placement[f.name] = node
            if f.name in wf.sources():
                continue
            sched = self.scheduling_ms if f.scheduling_ms is None else f.scheduling_ms
            self.platform.deploy(f.name, node.name, node.address, f.total_cold_start_ms, sched)

    def node_of(self, function: str) -> Node:
        return self._placement[function]

    def set_workflow(self, workflow: WorkflowSpec) -> None:
        """Swap timing knobs (added delay, storage kind) without redeploying nodes."""
        if workflow.names != self.workflow.names:
            raise ConfigError("set_workflow only changes timings, not the function set")
        self.workflow = workflow
        for f in workflow.functions:
            if f.name in self.platform.instances:
                self.platform.set_cold_start(f.name, f.total_cold_start_ms)

    # -- recording -------------------------------------------------------

    def _mark(self, function: str, phase: str, latest: bool = False) -> None:
        active = self._active
        if active is None:
            return
        t = self.clock.now_ms() - active.origin_ms
        with active.lock:
            phases = active.record.phases.setdefault(function, {})
            if latest or phase not in phases:
                phases[phase] = t

    def _on_phase(self, function: str, phase: str, _t: float) -> None:
        self._mark(function, phase)

    def _fail(self, what: str) -> None:
        active = self._active
        if active is None:
            return
        with active.lock:
            if not active.record.failed:
                active.record.failed = True
                active.record.failure = what

    # -- function runtime ------------------------------------------------

    def _acquire_input(self, name: str, node: Node, req: wire.Request) -> bytes:
        key = req.header(wire.H_KEY)
        if key:
            resp = node.transport.request(node.address, "GET", f"/truffle/buffer/{wire.path_segment(key)}",
                                          {}, b"", None)
            if not resp.ok:
                raise StorageError(f"buffer read {resp.status} {resp.error}")
            self.clock.sleep(self.profiles.buffer_read.cost_ms(len(resp.body)))
            return resp.body
        descriptor = StorageDescriptor.from_headers(req.header)
        if descriptor.kind != StorageKind.DIRECT:
            return node.storage.fetch(descriptor)
        origin = req.header(H_ORIGIN)
        if origin and origin != node.name:
            # data moves only once the function has started
            self.clock.sleep(self.profiles.link.cost_ms(len(req.body)))
        return req.body

    def _run_function(self, name: str, req: wire.Request) -> wire.Response:
        spec = self.workflow[name]
        node = self.node_of(name)
        self._mark(name, "request_delivered")
        try:
            payload = self._acquire_input(name, node, req)
        except Exception as exc:
            self._fail(f"{name}:input:{exc}")
            return wire.error_response(424, "input_failed", str(exc))
        self._mark(name, "data_ready", latest=True)
        if self.capture_inputs:
            self.captured.setdefault(name, []).append(payload)

        expected = len(self.workflow.upstream(name))
        active = self._active
        if active is not None:
            with active.lock:
                active.arrivals[name] = active.arrivals.get(name, 0) + 1
                last = active.arrivals[name] >= expected
                if last:
                    active.record.triggered_by[name] = req.header(H_CALLER) or ""
            if not last:
                return wire.Response(202, b"joined")

        self._mark(name, "compute_start")
        self.clock.sleep(spec.compute_ms)
        self._mark(name, "compute_end")
        trace = req.header(wire.H_TRACE) or ""
        mode = active.record.mode if active else Mode.TRUFFLE
        errors = self._emit_all(name, payload, trace, Mode(mode), staged=False)
        self._mark(name, "response")
        if errors:
            return wire.error_response(502, "downstream_failed", "; ".join(errors))
        return wire.Response(200, f"{name}:{len(payload)}".encode())

    def run_function(self, name: str, req: wire.Request) -> wire.Response:
        """Execute ``name`` for a delivered request: read input, compute, call downstream."""
        return self._run_function(name, req)

    # -- emission --------------------------------------------------------

    def _descriptor(self, kind: StorageKind, trace: str, source: str, target: str) -> StorageDescriptor:
        object_id = f"{trace}-{source}-{target}"
        if kind == StorageKind.KVS:
            return StorageDescriptor.kvs(KVS_ADDR, object_id)
        return StorageDescriptor.object_store(OBJECT_STORE_ADDR, BUCKET, object_id)

    def stage_input(self, source: str, target: str, trace: str, payload: bytes) -> None:
        kind = self.workflow.kind_for(target)
        if kind == StorageKind.DIRECT:
            return
        d = self._descriptor(kind, trace, source, target)
        if kind == StorageKind.KVS:
            self.kvs.seed(d.key, payload)
        else:
            self.object_store.seed(d.bucket, d.object_id, payload)

    def emit(self, source: str, target: str, payload: bytes, trace: str, mode: Mode,
             staged: bool = False) -> wire.Response:
        node = self.node_of(source)
        kind = self.workflow.kind_for(target)
        headers = {wire.H_TARGET: target, wire.H_TRACE: trace, H_ORIGIN: node.name, H_CALLER: source}
        body = b""
        if kind == StorageKind.DIRECT:
            headers[wire.H_KIND] = StorageKind.DIRECT.value
            body = payload
        else:
            d = self._descriptor(kind, trace, source, target)
            if not staged:
                node.storage.store(d, payload)
            headers.update(d.to_headers())
        address = PLATFORM_ADDR if Mode(mode) is Mode.BASELINE else node.address
        return node.transport.request(address, "POST", "/invoke", headers, body, None)

    def _emit_all(self, source: str, payload: bytes, trace: str, mode: Mode, staged: bool) -> list[str]:
        targets = self.workflow[source].downstream
        errors: list[str] = []

        def one(target: str) -> None:
            try:
                resp = self.emit(source, target, payload, trace, mode, staged)
                if not resp.ok:
                    errors.append(f"{source}->{target}: {resp.status} {resp.error}")
            except Exception as exc:
                errors.append(f"{source}->{target}: {exc}")

        if len(targets) == 1:
            one(targets[0])
            return errors
        threads = [threading.Thread(target=one, args=(t,), daemon=True) for t in targets]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        return errors

    # -- invocation ------------------------------------------------------

    def reset(self) -> None:
        """Scale every function to zero and drop leftover buffer entries."""
        self.platform.scale_to_zero()
        for node in self.nodes:
            node.sidecar.buffer.clear()
        self.captured.clear()

    def invoke_workflow(self, input_size_mb: float, mode: Mode, payload: Optional[bytes] = None,
                        added_delay_ms: Optional[float] = None) -> MeasurementRecord:
        if input_size_mb < 0:
            raise ValueError("input size must be >= 0")
        mode = Mode(mode)
        with self._invoke_lock:
            if added_delay_ms is not None:
                self.set_workflow(self.workflow.with_added_delay(added_delay_ms))
            self.reset()
            if payload is None:
                payload = bytes(int(input_size_mb * MIB))
            trace = uuid.uuid4().hex
            wf = self.workflow
            delay = max((f.added_cold_start_delay_ms for f in wf.functions), default=0.0)
            record = MeasurementRecord(trace, mode, wf.name, wf.storage_kind.value, input_size_mb, delay)
            for source in wf.sources():
                for target in wf[source].downstream:
                    self.stage_input(source, target, trace, payload)

            self._active = _Active(record, self.clock.now_ms())
            errors: list[str] = []
            emitters = []
            for source in wf.sources():
                record.phases[source] = {"emit": 0.0}

                def run(s=source):
                    errors.extend(self._emit_all(s, payload, trace, mode, staged=True))

                t = threading.Thread(target=run, name=f"emit-{source}", daemon=True)
                t.start()
                emitters.append(t)
            budget = self.clock.to_real_ms(self.stage_timeout_ms * max(1, len(wf.functions))) / 1000.0
            for t in emitters:
                t.join(budget)
            if any(t.is_alive() for t in emitters):
                self._fail("workflow:timeout")
            elif errors:
                self._fail(errors[0])
            self._active = None
            self._finish(record)
            record.predicted_ms = self.predict(input_size_mb, mode)
            return record

    def _finish(self, record: MeasurementRecord) -> None:
        wf = self.workflow
        sources = set(wf.sources())
        for name, phases in record.phases.items():
            if name in sources or "data_ready" not in phases:
                continue
            start = phases.get("request_delivered", phases["data_ready"])
            record.io_ms[name] = max(0.0, phases["data_ready"] - start)
        ends = [record.phases.get(s, {}).get("response") for s in wf.sinks()]
        if record.failed or any(e is None for e in ends):
            if not record.failed:
                record.failed = True
                record.failure = "workflow:incomplete"
            return
        sink = max(wf.sinks(), key=lambda s: record.phases[s]["response"])
        record.end_to_end_ms = record.phases[sink]["response"]
        path, current = [], sink
        while current and current not in sources:
            path.append(current)
            current = record.triggered_by.get(current, "")
        record.critical_path = list(reversed(path))
        record.io_critical_path_ms = sum(record.io_ms.get(f, 0.0) for f in path)

    # -- analytic prediction ---------------------------------------------

    def stage_phases(self, size_mb: float, target: str, upstream: str) -> model.PhaseBreakdown:
        """Model phases for ``target`` receiving ``size_mb`` MiB from ``upstream``."""
        f = self.workflow[target]
        size = int(size_mb * MIB)
        kind = self.workflow.kind_for(target)
        if kind == StorageKind.DIRECT:
            same_node = self.node_of(upstream).name == self.node_of(target).name
            delta = 0.0 if same_node else self.profiles.link.cost_ms(size)
        else:
            delta = self.profiles.for_kind(kind).cost_ms(size)
        alpha = self.scheduling_ms if f.scheduling_ms is None else f.scheduling_ms
        return model.PhaseBreakdown(alpha, f.total_cold_start_ms, 0, delta, f.compute_ms)

    def predict(self, size_mb: float, mode: Mode) -> float:
        """End-to-end latency the analytic model expects for one invocation (model ms)."""
        wf = self.workflow
        overlapped = Mode(mode) is Mode.TRUFFLE
        size = int(size_mb * MIB)
        sources = set(wf.sources())
        finish: dict[str, float] = {s: 0.0 for s in sources}
        for name in wf.order():
            if name in sources:
                continue
            best = 0.0
            for up in wf.upstream(name):
                kind = wf.kind_for(name)
                upload = 0.0
                if kind != StorageKind.DIRECT and up not in sources:
                    upload = self.profiles.for_kind(kind).cost_ms(size)
                stage = model.end_to_end(self.stage_phases(size_mb, name, up), overlapped)
                if overlapped:
                    stage += self.profiles.buffer_read.cost_ms(size)
                best = max(best, finish[up] + upload + stage)
            finish[name] = best
        return max(finish[s] for s in wf.sinks())


def deploy(workflow: WorkflowSpec, nodes: int, scale: float = 1.0, **kwargs) -> Cluster:
    """Bring up ``nodes`` simulated nodes, one sidecar each, and register the workflow."""
    cluster = Cluster(workflow, nodes, scale, **kwargs)
    cluster._deploy()
    return cluster
