"""Cluster configuration documents (YAML or JSON).

Recognised keys::

    nodes: 2
    scale_factor: 1.0
    topology: chain | fan_out_fan_in
    storage_kind: direct | kvs | object_store
    scheduling_ms: 20
    functions:
      - {name, cold_start_ms, added_delay_ms, compute_ms, placement, downstream, scheduling_ms}
    backends:
      kvs: {base_ms, per_mb_ms}
      object_store: {base_ms, per_mb_ms}
      direct: {base_ms, per_mb_ms}        # node-to-node link
      buffer_read: {base_ms, per_mb_ms}
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from truffle.errors import ConfigError
from truffle.sim import backends
from truffle.sim.cluster import Cluster, ClusterProfiles, deploy
from truffle.sim.network import LatencyProfile
from truffle.sim.workflow import FunctionSpec, WorkflowSpec

SCALE_ENV = "TRUFFLE_SCALE"

_PROFILE_FIELDS = {"kvs": "kvs", "object_store": "object_store", "direct": "link", "buffer_read": "buffer_read"}


def load_document(path: Union[str, Path]) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return doc


def _profile(name: str, raw: Any) -> LatencyProfile:
    if isinstance(raw, str):
        if raw not in backends.PROFILES:
            raise ConfigError(f"backends.{name}: unknown profile {raw!r}")
        return backends.PROFILES[raw]
    if not isinstance(raw, Mapping):
        raise ConfigError(f"backends.{name} must be a mapping or a profile name")
    unknown = set(raw) - {"base_ms", "per_mb_ms"}
    if unknown:
        raise ConfigError(f"backends.{name}: unknown keys {sorted(unknown)}")
    try:
        return LatencyProfile(float(raw.get("base_ms", 0)), float(raw.get("per_mb_ms", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backends.{name}: {exc}") from exc


def parse_profiles(raw: Optional[Mapping], base: Optional[ClusterProfiles] = None) -> ClusterProfiles:
    profiles = base or ClusterProfiles()
    for name, value in (raw or {}).items():
        if name not in _PROFILE_FIELDS:
            raise ConfigError(f"backends: unknown backend {name!r}")
        profiles = replace(profiles, **{_PROFILE_FIELDS[name]: _profile(name, value)})
    return profiles


def parse_function(raw: Mapping) -> FunctionSpec:
    if "name" not in raw:
        raise ConfigError("every function needs a name")
    allowed = {"name", "cold_start_ms", "added_delay_ms", "compute_ms", "placement", "downstream",
               "scheduling_ms", "input_kind"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"function {raw['name']}: unknown keys {sorted(unknown)}")
    try:
        return FunctionSpec(
            name=str(raw["name"]),
            cold_start_ms=float(raw.get("cold_start_ms", 0)),
            added_cold_start_delay_ms=float(raw.get("added_delay_ms", 0)),
            compute_ms=float(raw.get("compute_ms", 0)),
            downstream=list(raw.get("downstream") or []),
            placement=raw.get("placement"),
            scheduling_ms=raw.get("scheduling_ms"),
            input_kind=raw.get("input_kind"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"function {raw['name']}: {exc}") from exc


@dataclass
class ClusterConfig:
    workflow: WorkflowSpec
    nodes: int
    scale_factor: float = 1.0
    scheduling_ms: float = 20.0
    profiles: ClusterProfiles = field(default_factory=ClusterProfiles)

    @classmethod
    def from_dict(cls, doc: Mapping, name: str = "custom") -> "ClusterConfig":
        functions = doc.get("functions")
        if not functions:
            raise ConfigError("cluster config needs a non-empty functions list")
        try:
            workflow = WorkflowSpec(
                str(doc.get("name", name)),
                [parse_function(f) for f in functions],
                doc.get("topology", "chain"),
                doc.get("storage_kind", "direct"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        placements = {f.placement for f in workflow.functions if f.placement is not None}
        nodes = int(doc.get("nodes", max(len(placements), 1)))
        return cls(
            workflow=workflow,
            nodes=nodes,
            scale_factor=float(doc.get("scale_factor", 1.0)),
            scheduling_ms=float(doc.get("scheduling_ms", 20.0)),
            profiles=parse_profiles(doc.get("backends")),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ClusterConfig":
        return cls.from_dict(load_document(path), Path(path).stem)

    def effective_scale(self, override: Optional[float] = None) -> float:
        return resolve_scale(self.scale_factor, override)

    def deploy(self, scale: Optional[float] = None, **kwargs) -> Cluster:
        return deploy(self.workflow, self.nodes, self.effective_scale(scale), profiles=self.profiles,
                      scheduling_ms=self.scheduling_ms, **kwargs)


def resolve_scale(configured: float, override: Optional[float] = None) -> float:
    """Explicit override, else ``$TRUFFLE_SCALE``, else the configured value."""
    if override is not None:
        return float(override)
    env = os.environ.get(SCALE_ENV)
    if env:
        try:
            return float(env)
        except ValueError as exc:
            raise ConfigError(f"{SCALE_ENV}={env!r} is not a number") from exc
    return float(configured)
