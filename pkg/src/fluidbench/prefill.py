"""Isolated prefill profiling and the prompt-length-dependent deadline curve.

First-token latency grows quadratically with prompt length, so a fixed
first-token target is meaningless across a workload with diverse prompts.
This module measures the endpoint in isolation (one request in flight, one
output token) across a range of prompt lengths and fits

    predicted_time(P) = a * P**2 + b * P + c

on the per-length medians. The fitted curve supplies the first-token deadline
for the fluidity metric and the baseline for black-box scheduling-delay
estimates.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import client as _client
from .workload import synth_prompt

DEFAULT_PROFILE_LENGTHS = tuple(
    int(round(256 * (8192 / 256) ** (i / 9))) for i in range(10)
)
DEFAULT_REPEATS = 3


class ProfilingError(RuntimeError):
    """Profiling produced no usable samples."""


class FitError(ValueError):
    """The quadratic fit is underdetermined or degenerate."""


@dataclass(frozen=True)
class ProfileSample:
    """One isolated first-token latency observation."""

    prompt_token_count: int
    observed_ttft: float


@dataclass
class PrefillCurve:
    """Quadratic prefill-latency model fitted on isolated profiling samples.

    Predictions are clamped below at the smallest observed per-length median
    so that extrapolation can never produce a non-positive deadline.
    """

    a: float
    b: float
    c: float
    rmse: float
    samples: int
    profiled_range: tuple[int, int]
    min_observed_s: float

    def predict(self, prompt_token_count: int) -> float:
        raw = (self.a * prompt_token_count + self.b) * prompt_token_count + self.c
        return max(raw, self.min_observed_s)

    def to_obj(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "rmse": self.rmse,
            "samples": self.samples,
            "profiled_range": list(self.profiled_range),
            "min_observed_s": self.min_observed_s,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "PrefillCurve":
        return cls(
            a=float(obj["a"]),
            b=float(obj["b"]),
            c=float(obj["c"]),
            rmse=float(obj["rmse"]),
            samples=int(obj["samples"]),
            profiled_range=(int(obj["profiled_range"][0]), int(obj["profiled_range"][1])),
            min_observed_s=float(obj["min_observed_s"]),
        )


def save_curve(curve: PrefillCurve, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(curve.to_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_curve(path: str | Path) -> PrefillCurve:
    with open(path, "r", encoding="utf-8") as fh:
        return PrefillCurve.from_obj(json.load(fh))


def predict_prefill_time(curve: PrefillCurve, prompt_token_count: int) -> float:
    """Evaluate the fitted curve at a prompt length (clamped, see above)."""
    return curve.predict(prompt_token_count)


def profile_prefill(
    endpoint: "_client.EndpointConfig",
    lengths: Sequence[int] = DEFAULT_PROFILE_LENGTHS,
    repeats: int = DEFAULT_REPEATS,
) -> tuple[list[ProfileSample], list[dict]]:
    """Measure isolated first-token latency, strictly one request at a time.

    Issues ``repeats`` requests per length with max_tokens=1 and records the
    observed TTFT of each. Returns (samples, gaps); a gap entry records a
    (length, repeat) probe that failed, with its error. Raises
    :class:`ProfilingError` if no probe succeeded at all.
    """
    if not lengths:
        raise ValueError("lengths must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")

    samples: list[ProfileSample] = []
    gaps: list[dict] = []
    epoch = time.monotonic()
    for length in lengths:
        prompt = synth_prompt(length)
        for rep in range(repeats):
            trace = _client.dispatch_request(
                endpoint,
                prompt=prompt,
                max_tokens=1,
                prompt_tokens=length,
                request_id=f"profile-{length}-{rep}",
                epoch=epoch,
            )
            if trace.status == "completed" and trace.events:
                ttft = trace.events[0].timestamp - trace.dispatch_time
                samples.append(ProfileSample(length, ttft))
            else:
                gaps.append(
                    {
                        "prompt_token_count": length,
                        "repeat": rep,
                        "status": trace.status,
                    }
                )
    if not samples:
        raise ProfilingError(
            f"profiling produced no samples ({len(gaps)} failed probes); "
            f"endpoint unreachable or rejecting requests"
        )
    return samples, gaps


def fit_quadratic(samples: Sequence[ProfileSample]) -> PrefillCurve:
    """Least-squares quadratic over per-length medians.

    The design matrix is built on lengths scaled by their maximum, which keeps
    it well conditioned across the 256..8192 span; coefficients are unscaled
    afterwards. RMSE is reported against the medians actually fitted.
    """
    if not samples:
        raise FitError("no samples")
    by_length: dict[int, list[float]] = {}
    for s in samples:
        by_length.setdefault(s.prompt_token_count, []).append(s.observed_ttft)
    if len(by_length) < 3:
        raise FitError(
            f"need >= 3 distinct prompt lengths for a quadratic fit, "
            f"got {len(by_length)}"
        )

    lengths = np.array(sorted(by_length), dtype=np.float64)
    medians = np.array(
        [float(np.median(by_length[int(p)])) for p in lengths], dtype=np.float64
    )

    scale = lengths.max()
    x = lengths / scale
    design = np.column_stack([x * x, x, np.ones_like(x)])
    coeffs, _, rank, _ = np.linalg.lstsq(design, medians, rcond=None)
    if rank < 3:
        raise FitError("degenerate design matrix (rank < 3)")

    a = float(coeffs[0]) / (scale * scale)
    b = float(coeffs[1]) / scale
    c = float(coeffs[2])
    residuals = medians - (a * lengths * lengths + b * lengths + c)
    rmse = float(math.sqrt(float(np.mean(residuals * residuals))))
    return PrefillCurve(
        a=a,
        b=b,
        c=c,
        rmse=rmse,
        samples=len(samples),
        profiled_range=(int(lengths[0]), int(lengths[-1])),
        min_observed_s=float(medians.min()),
    )
