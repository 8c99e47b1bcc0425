"""Streaming chat-completion client with per-event monotonic timestamps.

Speaks the OpenAI-style wire protocol: POST a JSON body with
``stream: true``, read back a ``text/event-stream`` of ``data: {...}`` frames
terminated by ``data: [DONE]``, and take content tokens from the first
choice's delta. Every content-bearing frame becomes a TokenEvent stamped with
the process-wide monotonic clock.

The transport is stdlib ``http.client`` on purpose: richer HTTP stacks add
1-2 ms of per-request overhead ahead of the first byte, which would pollute
isolated prefill profiling. Load runs dispatch each request on its own thread
at its scheduled offset regardless of what is still in flight (open loop);
there are no retries, since a retry would corrupt the timing record.
"""

from __future__ import annotations

import http.client
import json
import math
import os
import socket
import ssl
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Sequence
from urllib.parse import urlsplit

from ._timing import sleep_until
from .trace import (
    RequestTrace,
    RunMetadata,
    RunRecord,
    STATUS_COMPLETED,
    STATUS_ERRORED,
    STATUS_TIMED_OUT,
    TokenEvent,
)
from .workload import ArrivalSchedule, CHARS_PER_TOKEN, synth_prompt

HARNESS_VERSION = "0.1.0"

# Custom headers understood by the mock server; harmless elsewhere.
PROMPT_COUNT_HEADER = "X-Prompt-Token-Count"
REQUEST_ID_HEADER = "X-Request-Id"

TOKEN_COUNT_PER_CHUNK = "per-chunk"
TOKEN_COUNT_CHARS = "chars-per-token"


class ConfigError(ValueError):
    """Endpoint configuration cannot be resolved (e.g. missing auth token)."""


@dataclass
class EndpointConfig:
    """Where and how to send streaming requests."""

    base_url: str
    model: str
    api_path: str = "/v1/chat/completions"
    auth_env: str | None = None
    extra_headers: dict = field(default_factory=dict)
    timeout_s: float = 300.0
    token_count_mode: str = TOKEN_COUNT_PER_CHUNK

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        if self.token_count_mode not in (TOKEN_COUNT_PER_CHUNK, TOKEN_COUNT_CHARS):
            raise ValueError(f"unknown token_count_mode {self.token_count_mode!r}")

    def resolve_headers(self) -> dict:
        headers = {"Content-Type": "application/json", **self.extra_headers}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if not token:
                raise ConfigError(
                    f"auth token environment variable {self.auth_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers


def _split_url(config: EndpointConfig) -> tuple[str, str, int]:
    parts = urlsplit(config.base_url)
    if parts.scheme not in ("http", "https"):
        raise ConfigError(f"unsupported URL scheme in {config.base_url!r}")
    port = parts.port or (443 if parts.scheme == "https" else 80)
    return parts.scheme, parts.hostname or "localhost", port


def _chunk_tokens(content: str, mode: str) -> int:
    if mode == TOKEN_COUNT_PER_CHUNK:
        return 1
    return max(1, math.ceil(len(content) / CHARS_PER_TOKEN))


def dispatch_request(
    config: EndpointConfig,
    prompt: str,
    max_tokens: int,
    *,
    prompt_tokens: int,
    request_id: str,
    epoch: float,
) -> RequestTrace:
    """Send one streaming request and record its token-event timeline.

    ``dispatch_time`` is stamped at the instant the request is handed to the
    transport. Connection or protocol failures yield ``errored``, exceeding
    the configured request timeout yields ``timed_out``; both keep whatever
    events were already observed.
    """
    headers = config.resolve_headers()
    headers[PROMPT_COUNT_HEADER] = str(prompt_tokens)
    headers[REQUEST_ID_HEADER] = request_id
    body = json.dumps(
        {
            "model": config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
            "stream": True,
        }
    )
    scheme, host, port = _split_url(config)
    if scheme == "https":
        conn = http.client.HTTPSConnection(
            host, port, timeout=config.timeout_s, context=ssl.create_default_context()
        )
    else:
        conn = http.client.HTTPConnection(host, port, timeout=config.timeout_s)

    events: list[TokenEvent] = []
    status = STATUS_ERRORED
    dispatch_monotonic = time.monotonic()
    deadline = dispatch_monotonic + config.timeout_s
    try:
        conn.request("POST", config.api_path, body=body, headers=headers)
        if conn.sock is not None:
            conn.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        resp = conn.getresponse()
        if resp.status != 200:
            resp.read()
            return _finish(request_id, prompt_tokens, dispatch_monotonic, events,
                           STATUS_ERRORED, epoch)
        saw_done = False
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("request deadline exceeded")
            if conn.sock is not None:
                conn.sock.settimeout(remaining)
            line = resp.readline()
            now = time.monotonic()
            if not line:
                break
            stripped = line.strip()
            if not stripped.startswith(b"data:"):
                continue
            payload = stripped[5:].strip()
            if payload == b"[DONE]":
                saw_done = True
                break
            obj = json.loads(payload)
            choices = obj.get("choices") or []
            if not choices:
                continue
            content = (choices[0].get("delta") or {}).get("content") or ""
            if content:
                events.append(
                    TokenEvent(now - epoch, _chunk_tokens(content, config.token_count_mode))
                )
        status = STATUS_COMPLETED if saw_done else STATUS_ERRORED
    except (socket.timeout, TimeoutError):
        status = STATUS_TIMED_OUT
    except (OSError, http.client.HTTPException, json.JSONDecodeError,
            KeyError, IndexError, TypeError):
        status = STATUS_ERRORED
    finally:
        conn.close()
    return _finish(request_id, prompt_tokens, dispatch_monotonic, events, status, epoch)


def _finish(request_id, prompt_tokens, dispatch_monotonic, events, status, epoch):
    return RequestTrace(
        request_id=request_id,
        dispatch_time=dispatch_monotonic - epoch,
        prompt_token_count=prompt_tokens,
        events=events,
        status=status,
    )


def run_load(
    config: EndpointConfig,
    requests: Sequence[tuple[int, int]],
    schedule: ArrivalSchedule,
    *,
    workload_seed: int = 0,
) -> RunRecord:
    """Execute one open-loop load run and collect all traces.

    Each request is dispatched at its schedule offset on a fresh worker
    thread, regardless of how many requests are still in flight. Individual
    request failures never abort the run; they are recorded in the traces.
    """
    if len(requests) != len(schedule.offsets):
        raise ConfigError(
            f"workload has {len(requests)} requests but schedule has "
            f"{len(schedule.offsets)} offsets"
        )
    config.resolve_headers()  # fail fast on missing auth before dispatching

    n = len(requests)
    started_at = datetime.now(timezone.utc).isoformat()
    prompts = [synth_prompt(p) for p, _ in requests]
    traces: list[RequestTrace | None] = [None] * n
    lateness: list[float] = []
    threads: list[threading.Thread] = []
    epoch = time.monotonic()

    def worker(i: int) -> None:
        prompt_toks, max_toks = requests[i]
        try:
            traces[i] = dispatch_request(
                config,
                prompts[i],
                max_toks,
                prompt_tokens=prompt_toks,
                request_id=f"r{i:05d}",
                epoch=epoch,
            )
        except Exception:
            traces[i] = RequestTrace(
                request_id=f"r{i:05d}",
                dispatch_time=time.monotonic() - epoch,
                prompt_token_count=prompt_toks,
                events=[],
                status=STATUS_ERRORED,
            )

    for i, offset in enumerate(schedule.offsets):
        sleep_until(epoch + offset)
        lateness.append(time.monotonic() - (epoch + offset))
        th = threading.Thread(target=worker, args=(i,), daemon=True)
        th.start()
        threads.append(th)

    join_deadline = time.monotonic() + config.timeout_s + 30.0
    for th in threads:
        th.join(timeout=max(0.1, join_deadline - time.monotonic()))
    for i in range(n):
        if traces[i] is None:
            traces[i] = RequestTrace(
                request_id=f"r{i:05d}",
                dispatch_time=schedule.offsets[i],
                prompt_token_count=requests[i][0],
                events=[],
                status=STATUS_TIMED_OUT,
            )

    final = [t for t in traces if t is not None]
    achieved_qps = None
    if n > 1:
        span = max(t.dispatch_time for t in final) - min(t.dispatch_time for t in final)
        if span > 0:
            achieved_qps = (n - 1) / span
    extra = {"achieved_qps": achieved_qps}
    if lateness:
        ordered = sorted(lateness)
        extra["dispatch_lateness_median_s"] = ordered[len(ordered) // 2]
        extra["dispatch_lateness_max_s"] = ordered[-1]
    metadata = RunMetadata(
        endpoint=config.base_url,
        model=config.model,
        workload_seed=workload_seed,
        target_qps=schedule.target_qps,
        started_at=started_at,
        harness_version=HARNESS_VERSION,
        extra=extra,
    )
    return RunRecord(metadata=metadata, traces=final)
