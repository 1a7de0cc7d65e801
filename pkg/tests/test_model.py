import pytest
from hypothesis import given
from hypothesis import strategies as st

from truffle.errors import ModelDomainError
from truffle.model import (
    REFERENCE_ROWS,
    PhaseBreakdown,
    cold_start,
    end_to_end,
    improvement,
    overlap_phase,
    report,
    workflow_objective,
)

D128 = PhaseBreakdown.from_row(20, 2375, 1291, 15)
KVS128 = PhaseBreakdown.from_row(16, 2033, 1584, 12)
S3128 = PhaseBreakdown.from_row(34, 1660, 2481, 15)

ms = st.integers(min_value=0, max_value=100_000)


def timeline_oracle(p: PhaseBreakdown, overlapped: bool) -> int:
    """Walk the lifecycle one millisecond at a time.

    Scheduling ends at alpha. Cold start runs next; the transfer starts at
    alpha when overlapped, or once the cold start has finished otherwise.
    Compute starts in the first millisecond where both are done.
    """
    t = 0
    cold_done = transfer_done = None
    transfer_start = p.alpha_ms if overlapped else None
    while True:
        if cold_done is None and t >= p.alpha_ms + p.upsilon_ms + p.eta_ms:
            cold_done = t
            if transfer_start is None:
                transfer_start = t
        if transfer_start is not None and transfer_done is None and t >= transfer_start + p.delta_ms:
            transfer_done = t
        if cold_done is not None and transfer_done is not None:
            return t + p.gamma_ms
        t += 1


@pytest.mark.parametrize(
    "row, overlapped, expected",
    [
        (D128, False, 3701),
        (D128, True, 2410),
        (KVS128, False, 3645),
        (KVS128, True, 2061),
        (S3128, False, 4190),
        (S3128, True, 2530),
    ],
)
def test_oracle_agrees_with_frozen_values(row, overlapped, expected):
    assert timeline_oracle(row, overlapped) == expected
    assert end_to_end(row, overlapped) == expected


def test_cold_start_examples():
    assert cold_start(2375, 0) == 2375
    assert cold_start(0, 0) == 0
    assert cold_start(1200, 833) == 2033


def test_overlap_phase_examples():
    assert overlap_phase(2375, 1291) == 2375
    assert overlap_phase(777, 0) == 777
    assert overlap_phase(1660, 2481) == 2481


def test_improvement_examples():
    assert improvement(2375, 1291) == 1291
    assert improvement(0, 1291) == 0
    assert improvement(1660, 2481) == 1660


def test_end_to_end_zero():
    assert end_to_end(PhaseBreakdown(), overlapped=True) == 0
    assert end_to_end(PhaseBreakdown(), overlapped=False) == 0


def test_workflow_objective_examples():
    assert workflow_objective([D128]) == 2410
    assert workflow_objective([D128, D128]) == 2 * 2410
    assert workflow_objective([D128, S3128]) == 4940


def test_reference_rows_match_measured_figure():
    assert REFERENCE_ROWS["direct"] == D128
    assert REFERENCE_ROWS["kvs"] == KVS128
    assert REFERENCE_ROWS["object_store"] == S3128


@pytest.mark.parametrize("call", [
    lambda: cold_start(-1, 0),
    lambda: overlap_phase(0, -5),
    lambda: improvement(-1, 3),
    lambda: PhaseBreakdown(alpha_ms=-1),
    lambda: workflow_objective([]),
])
def test_domain_errors(call):
    with pytest.raises(ModelDomainError):
        call()


def test_report_fields_consistent():
    r = report(D128)
    assert r.phi_ms == 2375
    assert r.tau_baseline_ms == 3701
    assert r.tau_truffle_ms == 2410
    assert r.delta_improvement_ms == r.tau_baseline_ms - r.tau_truffle_ms == 1291


phases = st.builds(PhaseBreakdown, ms, ms, ms, ms, ms)


@given(ms, ms)
def test_improvement_is_min(beta, delta):
    assert improvement(beta, delta) == min(beta, delta)


@given(phases)
def test_overlap_never_slower(p):
    fast, slow = end_to_end(p, True), end_to_end(p, False)
    assert fast <= slow
    assert (fast == slow) == (p.beta_ms == 0 or p.delta_ms == 0)
    assert slow - fast == improvement(p.beta_ms, p.delta_ms)


@given(ms, ms)
def test_overlap_commutative_idempotent(a, b):
    assert overlap_phase(a, b) == overlap_phase(b, a)
    assert overlap_phase(a, a) == a


@given(st.lists(phases, min_size=1, max_size=6))
def test_objective_is_sum_of_overlapped(stages):
    assert workflow_objective(stages) == sum(end_to_end(s, True) for s in stages)


@given(ms, ms)
def test_beta_accessor(u, e):
    assert PhaseBreakdown(upsilon_ms=u, eta_ms=e).beta_ms == u + e
