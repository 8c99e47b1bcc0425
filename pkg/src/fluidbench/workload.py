"""Request workload generation and open-loop arrival schedules.

Workloads are (prompt_token_count, max_output_tokens) pairs; arrivals are
dispatch offsets from run start. Both are deterministic given the seed.
Arrivals default to a Poisson process (exponential inter-arrivals at the
target rate); open-loop dispatch exposes queueing collapse that closed-loop
concurrency hides. A fixed-interval schedule is available for debugging.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

# Prompt text is synthesized at roughly 4 characters per token; exact
# tokenizer-level counts are out of scope for a black-box harness. The mock
# server honors the declared-count header, which keeps token accounting exact
# in tests.
CHARS_PER_TOKEN = 4
_WORDS = ("lorem", "ipsum", "dolor", "amet", "tempor", "aliqua", "minim", "veniam")

DEFAULT_MAX_OUTPUT_TOKENS = 256
DEFAULT_PROMPT_RANGE = (256, 8192)


def synth_prompt(token_count: int) -> str:
    """Build filler text of approximately ``token_count`` tokens."""
    target_chars = token_count * CHARS_PER_TOKEN
    words = []
    size = 0
    i = 0
    while size < target_chars:
        w = _WORDS[i % len(_WORDS)]
        words.append(w)
        size += len(w) + 1
        i += 1
    return " ".join(words)[:target_chars]


@dataclass
class WorkloadSpec:
    """What to send: how many requests, how long, capped at how many tokens.

    Exactly one prompt-length source applies: a uniform integer range, a fixed
    list (cycled to ``count``), or a text file of newline-delimited integers.
    """

    count: int
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    seed: int = 0
    uniform_range: tuple[int, int] | None = None
    fixed_lengths: list[int] | None = None
    length_file: str | Path | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        sources = [
            self.uniform_range is not None,
            self.fixed_lengths is not None,
            self.length_file is not None,
        ]
        if sum(sources) == 0:
            self.uniform_range = DEFAULT_PROMPT_RANGE
        elif sum(sources) > 1:
            raise ValueError("specify at most one prompt length source")
        if self.uniform_range is not None:
            lo, hi = self.uniform_range
            if lo < 1 or hi < lo:
                raise ValueError("uniform_range requires 1 <= lo <= hi")


@dataclass
class ArrivalSchedule:
    """Dispatch offsets (seconds from run start), non-decreasing."""

    offsets: list[float]
    target_qps: float

    def __post_init__(self):
        if any(b < a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValueError("offsets must be non-decreasing")

    def __len__(self) -> int:
        return len(self.offsets)


def generate_requests(spec: WorkloadSpec) -> list[tuple[int, int]]:
    """Materialize (prompt_token_count, max_output_tokens) pairs.

    Deterministic given the spec's seed.
    """
    rng = random.Random(spec.seed)
    if spec.uniform_range is not None:
        lo, hi = spec.uniform_range
        lengths = [rng.randint(lo, hi) for _ in range(spec.count)]
    elif spec.fixed_lengths is not None:
        if not spec.fixed_lengths:
            raise ValueError("fixed_lengths is empty")
        lengths = [
            spec.fixed_lengths[i % len(spec.fixed_lengths)] for i in range(spec.count)
        ]
    else:
        lengths = _read_length_file(spec.length_file, spec.count)
    return [(length, spec.max_output_tokens) for length in lengths]


def _read_length_file(path: str | Path, count: int) -> list[int]:
    raw = [ln.strip() for ln in Path(path).read_text().splitlines()]
    values = [int(ln) for ln in raw if ln]
    if not values:
        raise ValueError(f"length file {path} contains no integers")
    return [values[i % len(values)] for i in range(count)]


def poisson_schedule(qps: float, count: int, seed: int) -> ArrivalSchedule:
    """Cumulative exponential inter-arrivals with mean 1/qps."""
    if qps <= 0:
        raise ValueError("qps must be > 0")
    rng = random.Random(seed)
    offsets = []
    t = 0.0
    for _ in range(count):
        t += rng.expovariate(qps)
        offsets.append(t)
    return ArrivalSchedule(offsets=offsets, target_qps=qps)


def uniform_schedule(qps: float, count: int) -> ArrivalSchedule:
    """Fixed-interval arrivals at 1/qps spacing (debugging aid)."""
    if qps <= 0:
        raise ValueError("qps must be > 0")
    return ArrivalSchedule(
        offsets=[(i + 1) / qps for i in range(count)], target_qps=qps
    )
