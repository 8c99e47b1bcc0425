"""Hot inner loop of the deadline metric: the slack-carrying deadline walk.

The walk is a scalar recurrence (slack feeds forward), so it cannot be
vectorized; solvers evaluate it once per trace per candidate deadline, which
makes it the package's only hot loop. The numba-compiled version is used when
available; set ``FLUIDBENCH_NO_NUMBA=1`` to force the interpreted fallback
(or it is selected automatically when numba is not importable).

Boundary conventions, shared with the independent absolute-time oracle in
``metrics``:
  - a gap exactly equal to deadline + slack counts as met; the met comparison
    carries an absolute guard of 1e-9 * decode_deadline to absorb float
    representation error,
  - the miss count floors the real quotient with a 1e-9 relative epsilon, so
    an exact positive multiple of the decode deadline counts the boundary
    deadline as missed,
  - slack is clamped at zero after the met-branch update (the real-arithmetic
    value there is always >= 0; float rounding can produce -1 ulp).
"""

from __future__ import annotations

import os

import numpy as np


def _fluidity_counts(gaps, first_deadline, decode_deadline):
    total = 0
    missed = 0
    slack = 0.0
    eps = 1e-9 * decode_deadline
    for i in range(gaps.shape[0]):
        t = gaps[i]
        d = first_deadline if i == 0 else decode_deadline
        if t <= d + slack + eps:
            slack = slack + d - t
            if slack < 0.0:
                slack = 0.0
            total += 1
        else:
            q = (t - slack - d) / decode_deadline
            misses = int(q + q * 1e-9) + 1
            missed += misses
            total += misses
            slack = 0.0
    return total, missed


fluidity_counts_py = _fluidity_counts

USING_NUMBA = False
fluidity_counts_jit = None

if os.environ.get("FLUIDBENCH_NO_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from numba import njit

        fluidity_counts_jit = njit(cache=True)(_fluidity_counts)
        USING_NUMBA = True
    except ImportError:
        fluidity_counts_jit = None


def fluidity_counts(
    gaps: np.ndarray, first_deadline: float, decode_deadline: float
) -> tuple[int, int]:
    """Return (total_deadlines, missed_deadlines) for one inter-token series.

    ``gaps`` must be a 1-D float64 array with non-negative entries;
    validation happens in the caller (``metrics.fluidity_index``).
    """
    if USING_NUMBA:
        return fluidity_counts_jit(gaps, first_deadline, decode_deadline)
    return fluidity_counts_py(gaps, first_deadline, decode_deadline)


def fluidity_counts_traced(
    gaps: np.ndarray, first_deadline: float, decode_deadline: float
) -> tuple[int, int, list[float]]:
    """Interpreted walk that also records the slack value after every step.

    Test instrumentation for the slack-conservation invariant; never used by
    the production path.
    """
    total = 0
    missed = 0
    slack = 0.0
    eps = 1e-9 * decode_deadline
    slacks: list[float] = []
    for i in range(gaps.shape[0]):
        t = gaps[i]
        d = first_deadline if i == 0 else decode_deadline
        if t <= d + slack + eps:
            slack = slack + d - t
            if slack < 0.0:
                slack = 0.0
            total += 1
        else:
            q = (t - slack - d) / decode_deadline
            misses = int(q + q * 1e-9) + 1
            missed += misses
            total += misses
            slack = 0.0
        slacks.append(slack)
    return total, missed, slacks
