"""Per-request latency metrics and the deadline-based fluidity index.

Conventional metrics (first-token latency, inter-token gaps, per-output-token
averages) each miss part of the streaming user experience: averages hide
stalls, tail gaps over-penalize isolated spikes, and none of them credits
tokens that arrive ahead of the reading rate. The fluidity index scores a
request against a per-token deadline schedule: the first token is due at the
prompt-dependent prefill deadline (plus a small scheduling slack), every later
token one decode deadline after the previous one. A token arriving early banks
the difference as slack for later tokens; a token arriving late is charged one
miss per deadline instant that elapsed, and the schedule restarts from its
actual arrival time.

Two independent implementations are provided: ``fluidity_index`` runs the
slack-carrying recurrence (hot path, numba-backed), and
``deadline_timeline_oracle`` walks the absolute deadline timeline and counts
elapsed deadline instants directly. They must agree exactly on every input;
the test suite enforces this over randomized series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import fluidity_counts
from .prefill import PrefillCurve
from .trace import RequestTrace, STATUS_COMPLETED, inter_token_times

DEFAULT_SCHEDULING_SLACK = 0.050

# Decode-deadline tiers: interactive chat, medium priority, relaxed.
DEADLINE_TIERS = {"strict": 0.025, "medium": 0.050, "relaxed": 0.100}


@dataclass
class DeadlineConfig:
    """Deadline parameters for the fluidity walk.

    The first-token deadline comes either from a fitted prefill curve
    (prompt-length dependent) or a fixed override; the scheduling slack is
    added on top of it. ``decode_deadline`` paces every subsequent token.
    """

    decode_deadline: float
    scheduling_slack: float = DEFAULT_SCHEDULING_SLACK
    prefill_curve: PrefillCurve | None = None
    prefill_override: float | None = None

    def __post_init__(self):
        if self.decode_deadline <= 0:
            raise ValueError("decode_deadline must be > 0")
        if self.scheduling_slack < 0:
            raise ValueError("scheduling_slack must be >= 0")
        if (self.prefill_curve is None) == (self.prefill_override is None):
            raise ValueError(
                "exactly one of prefill_curve / prefill_override must be set"
            )

    def first_token_deadline(self, prompt_token_count: int) -> float:
        if self.prefill_curve is not None:
            base = self.prefill_curve.predict(prompt_token_count)
        else:
            base = self.prefill_override
        return base + self.scheduling_slack

    def with_decode_deadline(self, decode_deadline: float) -> "DeadlineConfig":
        return DeadlineConfig(
            decode_deadline=decode_deadline,
            scheduling_slack=self.scheduling_slack,
            prefill_curve=self.prefill_curve,
            prefill_override=self.prefill_override,
        )


@dataclass(frozen=True)
class FluidityResult:
    """Deadline bookkeeping for one request."""

    total_deadlines: int
    missed_deadlines: int

    @property
    def index(self) -> float:
        if self.total_deadlines == 0:
            return 1.0
        return (self.total_deadlines - self.missed_deadlines) / self.total_deadlines

    @property
    def miss_rate(self) -> float:
        return 1.0 - self.index


# ---------------------------------------------------------------------------
# Simple per-request metrics
# ---------------------------------------------------------------------------


def _require_completed(trace: RequestTrace) -> None:
    if trace.status != STATUS_COMPLETED or not trace.events:
        raise ValueError(
            f"request {trace.request_id!r}: metric defined only for completed "
            f"traces with events (status={trace.status!r})"
        )


def ttft(trace: RequestTrace) -> float:
    """Dispatch to first output token."""
    _require_completed(trace)
    return trace.events[0].timestamp - trace.dispatch_time


def tpot(trace: RequestTrace) -> float | None:
    """Decode span divided by decode tokens (first token excluded).

    Undefined (None) below 2 total tokens; the decode phase is empty there.
    """
    _require_completed(trace)
    total_tokens = trace.total_output_tokens
    if total_tokens < 2:
        return None
    span = trace.events[-1].timestamp - trace.events[0].timestamp
    return span / (total_tokens - 1)


def normalized_latency(trace: RequestTrace) -> float | None:
    """End-to-end time divided by decode tokens. None below 2 tokens."""
    _require_completed(trace)
    total_tokens = trace.total_output_tokens
    if total_tokens < 2:
        return None
    return (trace.events[-1].timestamp - trace.dispatch_time) / (total_tokens - 1)


def scheduling_delay_estimate(trace: RequestTrace, curve: PrefillCurve) -> float:
    """Black-box estimate: observed TTFT minus predicted isolated prefill.

    Clamped at zero; an endpoint faster than its own isolated profile is
    treated as zero queueing, not negative.
    """
    return max(0.0, ttft(trace) - curve.predict(trace.prompt_token_count))


# ---------------------------------------------------------------------------
# Fluidity index (slack recurrence) and its absolute-time oracle
# ---------------------------------------------------------------------------


def _validate_series(series: Sequence[float], decode_deadline: float) -> None:
    if len(series) == 0:
        raise ValueError("inter-token series is empty")
    if decode_deadline <= 0:
        raise ValueError("decode_deadline must be > 0")
    for t in series:
        if t < 0:
            raise ValueError(f"negative inter-token time {t}")


def fluidity_index(
    series: Sequence[float], config: DeadlineConfig, prompt_token_count: int
) -> FluidityResult:
    """Score an inter-token series against its deadline schedule.

    Walks the series with carried slack: a token due at deadline ``d`` and
    arriving after gap ``t`` is met when ``t <= d + slack`` (slack then grows
    by ``d - t``); otherwise it is charged ``floor((t - slack - d)/D) + 1``
    misses (D = decode deadline) and the slack resets to zero. The first
    token's deadline is the prefill prediction plus scheduling slack; all
    later deadlines equal the decode deadline.
    """
    _validate_series(series, config.decode_deadline)
    gaps = np.asarray(series, dtype=np.float64)
    first_deadline = config.first_token_deadline(prompt_token_count)
    total, missed = fluidity_counts(gaps, first_deadline, config.decode_deadline)
    return FluidityResult(total_deadlines=int(total), missed_deadlines=int(missed))


def deadline_timeline_oracle(
    series: Sequence[float], config: DeadlineConfig, prompt_token_count: int
) -> FluidityResult:
    """Reference implementation on the absolute deadline timeline.

    Converts the series to absolute arrival times and walks the schedule
    d_i = first_deadline + i * decode_deadline, counting one miss per deadline
    instant that elapses before a late token lands, then re-anchoring the
    schedule at that token's actual arrival. Must return results identical to
    :func:`fluidity_index` on every input.
    """
    _validate_series(series, config.decode_deadline)
    d_d = config.decode_deadline
    eps = 1e-9 * d_d
    next_deadline = config.first_token_deadline(prompt_token_count)
    arrival = 0.0
    total = 0
    missed = 0
    for gap in series:
        arrival += gap
        if arrival <= next_deadline + eps:
            total += 1
            next_deadline += d_d
        else:
            # Count every deadline instant at or before the arrival; the
            # tolerance widens with distance walked, mirroring the relative
            # epsilon the recurrence applies to its miss-count quotient.
            first_missed = next_deadline
            while next_deadline <= arrival + 1e-9 * (next_deadline - first_missed + d_d):
                missed += 1
                total += 1
                next_deadline += d_d
            next_deadline = arrival + d_d
    return FluidityResult(total_deadlines=total, missed_deadlines=missed)


def fluidity_of_trace(trace: RequestTrace, config: DeadlineConfig) -> FluidityResult:
    """Convenience: derive the series from a completed trace and score it."""
    return fluidity_index(
        inter_token_times(trace), config, trace.prompt_token_count
    )


# ---------------------------------------------------------------------------
# Aggregation helpers
# ---------------------------------------------------------------------------


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if len(values) == 0:
        raise ValueError("percentile of empty sequence")
    if not 0 <= p <= 100:
        raise ValueError("p must be in [0, 100]")
    ordered = sorted(values)
    rank = max(1, math.ceil(p / 100 * len(ordered)))
    return ordered[rank - 1]


def cdf_points(values: Sequence[float]) -> list[tuple[float, float]]:
    """Sorted values paired with cumulative fractions i/n, ending at 1.0."""
    if len(values) == 0:
        raise ValueError("cdf of empty sequence")
    ordered = sorted(values)
    n = len(ordered)
    return [(v, (i + 1) / n) for i, v in enumerate(ordered)]
