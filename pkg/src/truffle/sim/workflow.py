"""Workflow descriptions and the two reference workloads."""

from __future__ import annotations

import enum
import graphlib
from dataclasses import dataclass, field, replace
from typing import Optional

from truffle.engine import StorageKind
from truffle.errors import ConfigError


class Topology(str, enum.Enum):
    CHAIN = "chain"
    FAN_OUT_FAN_IN = "fan_out_fan_in"


@dataclass
class FunctionSpec:
    """One function of a workflow.

    A function with no upstream is a source: it stands for the already
    running sender whose emission opens the measurement window, so its cold
    start and compute are not simulated.
    """

    name: str
    cold_start_ms: float = 0.0
    added_cold_start_delay_ms: float = 0.0
    compute_ms: float = 0.0
    downstream: list[str] = field(default_factory=list)
    placement: Optional[int] = None
    scheduling_ms: Optional[float] = None
    # storage kind carrying this function's input; None uses the workflow's
    input_kind: Optional[StorageKind] = None

    def __post_init__(self) -> None:
        for attr in ("cold_start_ms", "added_cold_start_delay_ms", "compute_ms"):
            if getattr(self, attr) < 0:
                raise ConfigError(f"{self.name}: {attr} must be >= 0")
        if self.scheduling_ms is not None and self.scheduling_ms < 0:
            raise ConfigError(f"{self.name}: scheduling_ms must be >= 0")
        if self.input_kind is not None:
            self.input_kind = StorageKind(self.input_kind)

    @property
    def total_cold_start_ms(self) -> float:
        return self.cold_start_ms + self.added_cold_start_delay_ms


@dataclass
class WorkflowSpec:
    name: str
    functions: list[FunctionSpec]
    topology: Topology = Topology.CHAIN
    storage_kind: StorageKind = StorageKind.DIRECT

    def __post_init__(self) -> None:
        self.topology = Topology(self.topology)
        self.storage_kind = StorageKind(self.storage_kind)
        self.validate()

    def __getitem__(self, name: str) -> FunctionSpec:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.functions]

    def upstream(self, name: str) -> list[str]:
        return [f.name for f in self.functions if name in f.downstream]

    def sources(self) -> list[str]:
        return [f.name for f in self.functions if not self.upstream(f.name)]

    def sinks(self) -> list[str]:
        return [f.name for f in self.functions if not f.downstream]

    def kind_for(self, name: str) -> StorageKind:
        return self[name].input_kind or self.storage_kind

    def order(self) -> list[str]:
        graph = {f.name: set(self.upstream(f.name)) for f in self.functions}
        return list(graphlib.TopologicalSorter(graph).static_order())

    def validate(self) -> None:
        names = self.names
        if not names:
            raise ConfigError("workflow has no functions")
        if len(set(names)) != len(names):
            raise ConfigError("function names must be unique")
        for f in self.functions:
            for d in f.downstream:
                if d not in names:
                    raise ConfigError(f"{f.name}: unknown downstream {d!r}")
        try:
            self.order()
        except graphlib.CycleError as exc:
            raise ConfigError(f"workflow has a cycle: {exc.args[1]}") from exc
        if self.topology is Topology.CHAIN:
            for f in self.functions:
                if len(f.downstream) > 1 or len(self.upstream(f.name)) > 1:
                    raise ConfigError(f"chain: {f.name} has more than one neighbour on a side")
        elif len(self.sinks()) != 1:
            raise ConfigError("fan_out_fan_in needs exactly one sink")
        if len(self.sources()) < 1:
            raise ConfigError("workflow needs a source")

    def with_added_delay(self, delay_ms: float) -> "WorkflowSpec":
        """Copy with ``delay_ms`` added to every non-source function's cold start."""
        sources = set(self.sources())
        funcs = [f if f.name in sources else replace(f, added_cold_start_delay_ms=delay_ms)
                 for f in self.functions]
        return replace(self, functions=funcs)

    def with_storage(self, kind: StorageKind) -> "WorkflowSpec":
        return replace(self, storage_kind=StorageKind(kind))


# cold start / compute per storage kind for the measured 128 MB invocation
_CHAIN_TIMINGS = {
    StorageKind.DIRECT: dict(scheduling_ms=20, cold_start_ms=2375, compute_ms=15),
    StorageKind.KVS: dict(scheduling_ms=16, cold_start_ms=2033, compute_ms=12),
    StorageKind.OBJECT_STORE: dict(scheduling_ms=34, cold_start_ms=1660, compute_ms=15),
}


def chain_workflow(storage_kind: StorageKind = StorageKind.DIRECT, **timings) -> WorkflowSpec:
    """Two chained functions: ``a`` sends its data to ``b`` on another node."""
    kind = StorageKind(storage_kind)
    params = {**_CHAIN_TIMINGS[kind], **timings}
    return WorkflowSpec(
        "chain",
        [FunctionSpec("a", downstream=["b"], placement=0), FunctionSpec("b", placement=1, **params)],
        Topology.CHAIN,
        kind,
    )


def video_workflow(storage_kind: StorageKind = StorageKind.DIRECT) -> WorkflowSpec:
    """Video streaming fans out to two decoders that fan in to image recognition."""
    return WorkflowSpec(
        "video",
        [
            FunctionSpec("streaming", downstream=["decoder_0", "decoder_1"], placement=0),
            FunctionSpec("decoder_0", cold_start_ms=1500, compute_ms=60, downstream=["recognition"],
                         placement=1, scheduling_ms=20),
            FunctionSpec("decoder_1", cold_start_ms=1500, compute_ms=60, downstream=["recognition"],
                         placement=2, scheduling_ms=20),
            FunctionSpec("recognition", cold_start_ms=1800, compute_ms=120, placement=0, scheduling_ms=20),
        ],
        Topology.FAN_OUT_FAN_IN,
        StorageKind(storage_kind),
    )


WORKLOADS = {"chain": chain_workflow, "video": video_workflow}
