"""Analytic latency model for a function invocation.

Every function passes through scheduling (alpha), a cold start made of
infrastructure setup (upsilon) and runtime startup (eta), an input data
transfer (delta) and its own compute (gamma). A sequential platform pays
for cold start and transfer back to back; the sidecar overlaps them, so
only the longer of the two lands on the critical path.

All durations are milliseconds. Integer inputs give integer outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

from truffle.errors import ModelDomainError

Millis = Union[int, float]


def _check(**values: Millis) -> None:
    for name, value in values.items():
        if value < 0:
            raise ModelDomainError(f"{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class PhaseBreakdown:
    alpha_ms: Millis = 0
    upsilon_ms: Millis = 0
    eta_ms: Millis = 0
    delta_ms: Millis = 0
    gamma_ms: Millis = 0

    def __post_init__(self) -> None:
        _check(
            alpha_ms=self.alpha_ms,
            upsilon_ms=self.upsilon_ms,
            eta_ms=self.eta_ms,
            delta_ms=self.delta_ms,
            gamma_ms=self.gamma_ms,
        )

    @property
    def beta_ms(self) -> Millis:
        """Cold start: infrastructure setup plus runtime startup."""
        return self.upsilon_ms + self.eta_ms

    @classmethod
    def from_row(cls, sched: Millis, prep: Millis, transfer: Millis, execute: Millis) -> "PhaseBreakdown":
        """Build from a (scheduling, cold start, transfer, compute) row, cold start taken as setup only."""
        return cls(alpha_ms=sched, upsilon_ms=prep, eta_ms=0, delta_ms=transfer, gamma_ms=execute)


@dataclass(frozen=True)
class ImprovementReport:
    phi_ms: Millis
    delta_improvement_ms: Millis
    tau_baseline_ms: Millis
    tau_truffle_ms: Millis


def cold_start(upsilon_ms: Millis, eta_ms: Millis) -> Millis:
    _check(upsilon_ms=upsilon_ms, eta_ms=eta_ms)
    return upsilon_ms + eta_ms


def overlap_phase(beta_ms: Millis, delta_ms: Millis) -> Millis:
    """Duration of the overlapped cold-start/transfer phase: the longer task wins."""
    _check(beta_ms=beta_ms, delta_ms=delta_ms)
    return max(beta_ms, delta_ms)


def end_to_end(phases: PhaseBreakdown, overlapped: bool) -> Millis:
    if overlapped:
        middle = overlap_phase(phases.beta_ms, phases.delta_ms)
    else:
        middle = phases.beta_ms + phases.delta_ms
    return phases.alpha_ms + middle + phases.gamma_ms


def improvement(beta_ms: Millis, delta_ms: Millis) -> Millis:
    """Time saved by overlapping; equal to ``min(beta_ms, delta_ms)``."""
    _check(beta_ms=beta_ms, delta_ms=delta_ms)
    return (beta_ms + delta_ms) - max(beta_ms, delta_ms)


def workflow_objective(stages: Sequence[PhaseBreakdown]) -> Millis:
    """Sum of overlapped stage latencies over a sequential workflow.

    This evaluates the quantity the sidecar drives down; it does not search
    over placements or schedules.
    """
    if not stages:
        raise ModelDomainError("workflow needs at least one stage")
    return sum(end_to_end(stage, overlapped=True) for stage in stages)


def report(phases: PhaseBreakdown) -> ImprovementReport:
    baseline = end_to_end(phases, overlapped=False)
    overlapped = end_to_end(phases, overlapped=True)
    return ImprovementReport(
        phi_ms=overlap_phase(phases.beta_ms, phases.delta_ms),
        delta_improvement_ms=improvement(phases.beta_ms, phases.delta_ms),
        tau_baseline_ms=baseline,
        tau_truffle_ms=overlapped,
    )


# Measured per-phase latencies (ms) of one cold 128 MB invocation on a
# Knative/MicroK8s cluster, per storage kind: scheduling, cold start,
# transfer, compute.
REFERENCE_ROWS: dict[str, PhaseBreakdown] = {
    "direct": PhaseBreakdown.from_row(20, 2375, 1291, 15),
    "kvs": PhaseBreakdown.from_row(16, 2033, 1584, 12),
    "object_store": PhaseBreakdown.from_row(34, 1660, 2481, 15),
}
