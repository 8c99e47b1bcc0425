"""SLO-constrained searches over recorded runs and live load levels.

Two searches, both exploiting monotonicity:

* the minimum decode deadline under which the required fraction of requests
  reaches the fluidity threshold (its inverse is the sustainable fluid token
  generation rate), found by binary search on a fixed resolution grid, and
* the maximum request rate (capacity) under a fixed decode-deadline SLO,
  found by bracketed binary search over live probe runs.

Failed requests (errored or timed out) score fluidity 0: a crashing server
must not look fluid. Solvers over recorded runs are pure and deterministic;
the capacity search drives one probe run at a time, never overlapping two
probes against the same endpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._kernels import fluidity_counts
from .metrics import DeadlineConfig, percentile, tpot
from .trace import RequestTrace, RunRecord, STATUS_COMPLETED, inter_token_times

DEFAULT_RESOLUTION = 0.001
MAX_DEADLINE = 10.0


@dataclass
class SloSpec:
    """Per-request fluidity threshold and the fraction of requests owing it."""

    fluidity_threshold: float = 0.9
    request_fraction: float = 0.99
    decode_deadline: float | None = None  # fixed for capacity search

    def __post_init__(self):
        if not 0 < self.fluidity_threshold <= 1:
            raise ValueError("fluidity_threshold must be in (0, 1]")
        if not 0 < self.request_fraction <= 1:
            raise ValueError("request_fraction must be in (0, 1]")


@dataclass
class _PreparedRun:
    """Per-trace series and first-token deadlines, fixed across the D_d grid."""

    gaps: list[np.ndarray]
    first_deadlines: list[float]
    failed: int

    @property
    def total(self) -> int:
        return len(self.gaps) + self.failed


def _prepare(run: RunRecord, config: DeadlineConfig) -> _PreparedRun:
    gaps: list[np.ndarray] = []
    first_deadlines: list[float] = []
    failed = 0
    for trace in run.traces:
        if trace.status == STATUS_COMPLETED and trace.events:
            gaps.append(np.asarray(inter_token_times(trace), dtype=np.float64))
            first_deadlines.append(config.first_token_deadline(trace.prompt_token_count))
        else:
            failed += 1
    return _PreparedRun(gaps=gaps, first_deadlines=first_deadlines, failed=failed)


def _satisfied_fraction(prepared: _PreparedRun, decode_deadline: float,
                        threshold: float) -> float:
    satisfied = 0
    for series, first_deadline in zip(prepared.gaps, prepared.first_deadlines):
        total, missed = fluidity_counts(series, first_deadline, decode_deadline)
        if (total - missed) / total >= threshold:
            satisfied += 1
    return satisfied / prepared.total


def slo_satisfied_fraction(run: RunRecord, config: DeadlineConfig,
                           slo: SloSpec) -> float:
    """Fraction of requests whose fluidity index reaches the threshold.

    Errored and timed-out requests count as index 0, i.e. against the SLO.
    """
    if not run.traces:
        raise ValueError("run has no traces")
    prepared = _prepare(run, config)
    return _satisfied_fraction(prepared, config.decode_deadline,
                               slo.fluidity_threshold)


def fluidity_sweep(
    run: RunRecord,
    config_template: DeadlineConfig,
    slo: SloSpec,
    deadlines: Sequence[float],
) -> list[tuple[float, float]]:
    """Satisfied fraction across a decode-deadline grid (non-decreasing)."""
    if not run.traces:
        raise ValueError("run has no traces")
    prepared = _prepare(run, config_template)
    return [
        (d, _satisfied_fraction(prepared, d, slo.fluidity_threshold))
        for d in deadlines
    ]


@dataclass(frozen=True)
class DeadlineSearchResult:
    """Outcome of the minimum-feasible-deadline search."""

    deadline_s: float
    saturated: bool
    resolution_s: float


def min_feasible_deadline(
    run: RunRecord,
    config_template: DeadlineConfig,
    slo: SloSpec,
    resolution: float = DEFAULT_RESOLUTION,
    max_deadline: float = MAX_DEADLINE,
) -> DeadlineSearchResult:
    """Smallest grid deadline meeting the SLO, by binary search.

    The satisfied fraction is non-decreasing in the decode deadline (more
    slack per token can only help), so binary search over the grid of
    ``resolution`` multiples is exact. If even ``max_deadline`` fails, the
    upper bound is returned flagged as saturated.
    """
    if not run.traces:
        raise ValueError("run has no traces")
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    prepared = _prepare(run, config_template)
    top = max(1, math.ceil(max_deadline / resolution))

    def ok(k: int) -> bool:
        return (
            _satisfied_fraction(prepared, k * resolution, slo.fluidity_threshold)
            >= slo.request_fraction
        )

    if not ok(top):
        return DeadlineSearchResult(top * resolution, saturated=True,
                                    resolution_s=resolution)
    if ok(1):
        return DeadlineSearchResult(resolution, saturated=False,
                                    resolution_s=resolution)
    lo, hi = 1, top  # ok(lo) is False, ok(hi) is True
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return DeadlineSearchResult(hi * resolution, saturated=False,
                                resolution_s=resolution)


@dataclass(frozen=True)
class FluidRateResult:
    """Sustainable token rate implied by the minimum feasible deadline."""

    tokens_per_s: float
    deadline_s: float
    saturated: bool


def fluid_rate(
    run: RunRecord,
    config_template: DeadlineConfig,
    slo: SloSpec,
    resolution: float = DEFAULT_RESOLUTION,
) -> FluidRateResult:
    """Inverse of the minimum feasible decode deadline (0 if saturated)."""
    search = min_feasible_deadline(run, config_template, slo, resolution)
    if search.saturated:
        return FluidRateResult(0.0, search.deadline_s, saturated=True)
    return FluidRateResult(1.0 / search.deadline_s, search.deadline_s,
                           saturated=False)


# ---------------------------------------------------------------------------
# Capacity search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    """One live probe at a load level."""

    qps: float
    satisfied_fraction: float
    p99_tbt_s: float | None
    mean_tpot_s: float | None
    scored_requests: int

    def to_obj(self) -> dict:
        return {
            "qps": self.qps,
            "satisfied_fraction": self.satisfied_fraction,
            "p99_tbt_s": self.p99_tbt_s,
            "mean_tpot_s": self.mean_tpot_s,
            "scored_requests": self.scored_requests,
        }


@dataclass
class CapacityResult:
    """Largest probed load meeting the SLO, plus the full search trajectory.

    ``status`` is ``converged`` for a normal bracketed search,
    ``unsaturated`` when even the upper bound satisfied the SLO, and
    ``infeasible_at_lower_bound`` when the lower bound already failed (the
    true capacity lies below it; ``capacity_qps`` then echoes that bound).
    """

    capacity_qps: float
    status: str
    slo: SloSpec
    trajectory: list[ProbeResult] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "capacity_qps": self.capacity_qps,
            "status": self.status,
            "slo": {
                "fluidity_threshold": self.slo.fluidity_threshold,
                "request_fraction": self.slo.request_fraction,
                "decode_deadline_s": self.slo.decode_deadline,
            },
            "trajectory": [p.to_obj() for p in self.trajectory],
        }


class CapacitySearchError(RuntimeError):
    """A probe run failed; carries the trajectory gathered so far."""

    def __init__(self, message: str, trajectory: list[ProbeResult]):
        super().__init__(message)
        self.trajectory = trajectory


def _score_probe(run: RunRecord, config: DeadlineConfig, slo: SloSpec,
                 qps: float, warmup: int) -> ProbeResult:
    traces = sorted(run.traces, key=lambda t: t.dispatch_time)[warmup:]
    if not traces:
        raise ValueError("probe run has no traces after warmup discard")
    scored = RunRecord(metadata=run.metadata, traces=list(traces))
    fraction = slo_satisfied_fraction(scored, config, slo)
    decode_gaps: list[float] = []
    tpots: list[float] = []
    for trace in traces:
        if trace.status == STATUS_COMPLETED and trace.events:
            decode_gaps.extend(inter_token_times(trace)[1:])
            tp = tpot(trace)
            if tp is not None:
                tpots.append(tp)
    return ProbeResult(
        qps=qps,
        satisfied_fraction=fraction,
        p99_tbt_s=percentile(decode_gaps, 99) if decode_gaps else None,
        mean_tpot_s=sum(tpots) / len(tpots) if tpots else None,
        scored_requests=len(traces),
    )


def capacity_search(
    runner: Callable[[float], RunRecord],
    config_template: DeadlineConfig,
    slo: SloSpec,
    qps_bounds: tuple[float, float],
    relative_tolerance: float = 0.1,
    warmup_responses: int = 20,
) -> CapacityResult:
    """Bracketed binary search for the maximum sustainable request rate.

    ``runner`` executes one fixed-size probe run at a given QPS and returns
    its RunRecord; probes run strictly one at a time. The first
    ``warmup_responses`` requests of each probe (dispatch order) are discarded
    before scoring. Midpoints are geometric; the search stops once
    ``hi / lo <= 1 + relative_tolerance`` and returns the largest satisfying
    probed load.
    """
    if slo.decode_deadline is None:
        raise ValueError("capacity search requires slo.decode_deadline")
    lo, hi = qps_bounds
    if not 0 < lo < hi:
        raise ValueError("qps_bounds must satisfy 0 < lo < hi")
    if relative_tolerance <= 0:
        raise ValueError("relative_tolerance must be > 0")
    config = config_template.with_decode_deadline(slo.decode_deadline)
    trajectory: list[ProbeResult] = []

    def probe(qps: float) -> ProbeResult:
        try:
            run = runner(qps)
            result = _score_probe(run, config, slo, qps, warmup_responses)
        except Exception as exc:
            raise CapacitySearchError(
                f"probe at {qps} QPS failed: {exc}", trajectory
            ) from exc
        trajectory.append(result)
        return result

    if probe(lo).satisfied_fraction < slo.request_fraction:
        return CapacityResult(capacity_qps=lo, status="infeasible_at_lower_bound",
                              slo=slo, trajectory=trajectory)
    if probe(hi).satisfied_fraction >= slo.request_fraction:
        return CapacityResult(capacity_qps=hi, status="unsaturated",
                              slo=slo, trajectory=trajectory)
    while hi / lo > 1 + relative_tolerance:
        mid = round(math.sqrt(lo * hi), 3)
        if mid <= lo or mid >= hi:
            break
        if probe(mid).satisfied_fraction >= slo.request_fraction:
            lo = mid
        else:
            hi = mid
    return CapacityResult(capacity_qps=lo, status="converged",
                          slo=slo, trajectory=trajectory)
