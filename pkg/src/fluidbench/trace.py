"""Canonical timestamped trace of a benchmarked run.

A run is a set of request traces. Each trace records when the request was
handed to the transport and the instants at which output tokens were observed
on the stream. Timestamps are seconds relative to a per-run epoch captured
from a monotonic clock at run start; the wall-clock start time is stored once
in the run metadata, so multi-hour runs are immune to clock adjustments.

Multi-token events (burst emission, e.g. speculative decoding) are first-class:
a ``TokenEvent`` carries a token count, and the derived inter-token series
attributes the whole gap to the first token of the event and exactly 0 to the
rest.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Union

STATUS_COMPLETED = "completed"
STATUS_ERRORED = "errored"
STATUS_TIMED_OUT = "timed_out"
VALID_STATUSES = (STATUS_COMPLETED, STATUS_ERRORED, STATUS_TIMED_OUT)


class ParseError(ValueError):
    """A trace file line could not be decoded."""


class ValidationError(ValueError):
    """A trace or run violates a structural invariant."""


@dataclass(frozen=True)
class TokenEvent:
    """One observed emission instant delivering ``token_count`` output tokens."""

    timestamp: float
    token_count: int


@dataclass
class RequestTrace:
    """Timing record of a single streamed request.

    ``dispatch_time`` is the instant the request was handed to the transport,
    not when it was scheduled. ``events`` are ordered by timestamp; an event
    may carry more than one token (burst emission).
    """

    request_id: str
    dispatch_time: float
    prompt_token_count: int
    events: list[TokenEvent]
    status: str

    def validate(self) -> None:
        if self.status not in VALID_STATUSES:
            raise ValidationError(
                f"request {self.request_id!r}: invalid status {self.status!r}"
            )
        if self.prompt_token_count < 1:
            raise ValidationError(
                f"request {self.request_id!r}: prompt_token_count must be >= 1"
            )
        if self.status == STATUS_COMPLETED and not self.events:
            raise ValidationError(
                f"request {self.request_id!r}: completed trace has no events"
            )
        prev = None
        for ev in self.events:
            if ev.token_count < 1:
                raise ValidationError(
                    f"request {self.request_id!r}: event token_count must be >= 1"
                )
            if ev.timestamp < 0:
                raise ValidationError(
                    f"request {self.request_id!r}: negative event timestamp"
                )
            if ev.timestamp < self.dispatch_time:
                raise ValidationError(
                    f"request {self.request_id!r}: event at {ev.timestamp} "
                    f"precedes dispatch at {self.dispatch_time}"
                )
            if prev is not None and ev.timestamp < prev:
                raise ValidationError(
                    f"request {self.request_id!r}: event timestamps decrease"
                )
            prev = ev.timestamp

    @property
    def total_output_tokens(self) -> int:
        return sum(ev.token_count for ev in self.events)


@dataclass
class RunMetadata:
    """Run-level identification, captured once at run start."""

    endpoint: str
    model: str
    workload_seed: int
    target_qps: float | None
    started_at: str
    harness_version: str
    extra: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    """All traces of one benchmarked run plus its metadata."""

    metadata: RunMetadata
    traces: list[RequestTrace]

    def validate(self) -> None:
        seen: set[str] = set()
        for trace in self.traces:
            if trace.request_id in seen:
                raise ValidationError(f"duplicate request_id {trace.request_id!r}")
            seen.add(trace.request_id)
            trace.validate()

    def completed(self) -> list[RequestTrace]:
        return [t for t in self.traces if t.status == STATUS_COMPLETED]


def inter_token_times(trace: RequestTrace) -> list[float]:
    """Derive the inter-token time series consumed by all metrics.

    Element 0 is the first-token latency (first event timestamp minus
    dispatch). For every later event, the first token carries the gap from the
    previous event and the remaining ``token_count - 1`` tokens each carry
    exactly 0, so the series length equals the total number of output tokens.
    """
    if trace.status != STATUS_COMPLETED:
        raise ValueError(
            f"request {trace.request_id!r}: inter-token times are defined only "
            f"for completed traces (status={trace.status!r})"
        )
    if not trace.events:
        raise ValueError(f"request {trace.request_id!r}: no token events")

    series: list[float] = []
    prev = trace.dispatch_time
    for ev in trace.events:
        series.append(ev.timestamp - prev)
        series.extend(0.0 for _ in range(ev.token_count - 1))
        prev = ev.timestamp
    return series


# ---------------------------------------------------------------------------
# Serialization: line-delimited JSON
# ---------------------------------------------------------------------------
# Line 1 is the metadata object; each subsequent line is one trace object with
# keys request_id, dispatch_time, prompt_token_count, events, status. Events
# are [timestamp, token_count] pairs. Floats round-trip losslessly (shortest
# repr).

Destination = Union[str, Path, IO[str]]


def _metadata_to_obj(md: RunMetadata) -> dict:
    return {
        "endpoint": md.endpoint,
        "model": md.model,
        "workload_seed": md.workload_seed,
        "target_qps": md.target_qps,
        "started_at": md.started_at,
        "harness_version": md.harness_version,
        "extra": md.extra,
    }


def _trace_to_obj(trace: RequestTrace) -> dict:
    return {
        "request_id": trace.request_id,
        "dispatch_time": trace.dispatch_time,
        "prompt_token_count": trace.prompt_token_count,
        "events": [[ev.timestamp, ev.token_count] for ev in trace.events],
        "status": trace.status,
    }


def write_run(run: RunRecord, destination: Destination) -> None:
    """Write a validated run as line-delimited JSON (metadata line first)."""
    run.validate()
    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8", newline="\n") as fh:
            _write_lines(run, fh)
    else:
        _write_lines(run, destination)


def _write_lines(run: RunRecord, fh: IO[str]) -> None:
    fh.write(json.dumps(_metadata_to_obj(run.metadata), sort_keys=True))
    fh.write("\n")
    for trace in run.traces:
        fh.write(json.dumps(_trace_to_obj(trace), sort_keys=True))
        fh.write("\n")


def read_run(source: Destination) -> RunRecord:
    """Read and validate a run written by :func:`write_run`.

    Raises :class:`ParseError` naming the line number for malformed lines and
    :class:`ValidationError` naming the request for invariant violations.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return _read_lines(fh)
    return _read_lines(source)


def _read_lines(fh: IO[str]) -> RunRecord:
    lines = iter(enumerate(fh, start=1))
    try:
        lineno, first = next(lines)
    except StopIteration:
        raise ParseError("line 1: empty trace file (missing metadata line)")
    md_obj = _parse_obj(first, lineno)
    try:
        metadata = RunMetadata(
            endpoint=md_obj["endpoint"],
            model=md_obj["model"],
            workload_seed=md_obj["workload_seed"],
            target_qps=md_obj["target_qps"],
            started_at=md_obj["started_at"],
            harness_version=md_obj["harness_version"],
            extra=md_obj.get("extra", {}),
        )
    except KeyError as exc:
        raise ParseError(f"line {lineno}: metadata missing key {exc}") from None

    traces: list[RequestTrace] = []
    for lineno, line in lines:
        if not line.strip():
            continue
        obj = _parse_obj(line, lineno)
        try:
            trace = RequestTrace(
                request_id=obj["request_id"],
                dispatch_time=float(obj["dispatch_time"]),
                prompt_token_count=int(obj["prompt_token_count"]),
                events=[TokenEvent(float(t), int(n)) for t, n in obj["events"]],
                status=obj["status"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: malformed trace record: {exc}") from None
        traces.append(trace)

    run = RunRecord(metadata=metadata, traces=traces)
    run.validate()
    return run


def _parse_obj(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ParseError(f"line {lineno}: expected a JSON object")
    return obj


def dumps_run(run: RunRecord) -> str:
    """Serialize a run to a string (same format as :func:`write_run`)."""
    buf = io.StringIO()
    write_run(run, buf)
    return buf.getvalue()


def loads_run(text: str) -> RunRecord:
    return read_run(io.StringIO(text))


def iter_inter_token_series(traces: Iterable[RequestTrace]):
    """Yield (trace, series) for completed traces only."""
    for trace in traces:
        if trace.status == STATUS_COMPLETED and trace.events:
            yield trace, inter_token_times(trace)
