import os
import random
import subprocess
import sys

import numpy as np
import pytest

from fluidbench import _kernels

from _synth import random_series


@pytest.mark.skipif(not _kernels.USING_NUMBA, reason="numba disabled")
def test_jit_matches_pure_on_randomized_series():
    rng = random.Random(42)
    for _ in range(1000):
        gaps, d_p, d_d = random_series(rng)
        arr = np.asarray(gaps, dtype=np.float64)
        assert _kernels.fluidity_counts_jit(arr, d_p, d_d) == tuple(
            _kernels.fluidity_counts_py(arr, d_p, d_d)
        )


def test_traced_variant_matches_plain():
    rng = random.Random(43)
    for _ in range(300):
        gaps, d_p, d_d = random_series(rng)
        arr = np.asarray(gaps, dtype=np.float64)
        total, missed, slacks = _kernels.fluidity_counts_traced(arr, d_p, d_d)
        assert (total, missed) == tuple(_kernels.fluidity_counts_py(arr, d_p, d_d))
        assert len(slacks) == len(gaps)


def test_env_flag_selects_fallback():
    env = dict(os.environ, FLUIDBENCH_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c",
         "from fluidbench import _kernels; print(_kernels.USING_NUMBA)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "False"


def test_fallback_dispatch_used_when_disabled(monkeypatch):
    calls = []
    monkeypatch.setattr(_kernels, "USING_NUMBA", False)
    original = _kernels.fluidity_counts_py

    def spy(gaps, d_p, d_d):
        calls.append(1)
        return original(gaps, d_p, d_d)

    monkeypatch.setattr(_kernels, "fluidity_counts_py", spy)
    arr = np.array([0.1, 0.1], dtype=np.float64)
    assert _kernels.fluidity_counts(arr, 0.1, 0.1) == (2, 0)
    assert calls
