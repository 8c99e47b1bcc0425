"""Monotonic-clock pacing.

Plain ``time.sleep`` overshoots by up to ~1 ms under load; pacing to absolute
targets with a short micro-sleep tail keeps per-event error well inside the
harness tolerances without hot-spinning (hot spins hold the GIL and degrade
co-running streams).
"""

from __future__ import annotations

import time


def sleep_until(target: float) -> None:
    """Sleep until ``time.monotonic()`` reaches ``target``."""
    while True:
        remaining = target - time.monotonic()
        if remaining <= 0:
            return
        if remaining > 0.002:
            time.sleep(remaining - 0.001)
        else:
            time.sleep(0.00005)
