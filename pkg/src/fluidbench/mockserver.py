"""Deterministic streaming endpoint for desk-scale verification.

Emulates the timing phenomena a real inference endpoint exhibits: a
prompt-length-dependent (quadratic) prefill latency, steady decode cadence
with optional jitter, periodic stalls, burst emission of several tokens per
event, and a load-dependent capacity knee. It speaks exactly the wire
protocol the stream client expects and logs every emission with ground-truth
timestamps so tests can verify client-side recordings.

No text is generated: every token is a fixed placeholder. The prompt length
used for prefill latency comes from a request header declaring the token
count, which keeps token accounting exact without coupling client and server
to a tokenizer.
"""

from __future__ import annotations

import json
import math
import random
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from ._timing import sleep_until
from .client import PROMPT_COUNT_HEADER, REQUEST_ID_HEADER
from .workload import CHARS_PER_TOKEN

PLACEHOLDER_TOKEN = " tok"


@dataclass
class MockProfile:
    """Timing profile served by the mock endpoint.

    ``knee_qps`` plants a capacity knee: once the (smoothed) number of
    in-flight requests exceeds ``knee_qps * base_service_time(request)``, the
    decode cadence is multiplied by the overload ratio. The smoothing window
    filters Poisson arrival noise so the knee stays where it was planted; the
    onset remains monotone in offered load. Overload feeds back on itself
    under open-loop arrivals (slower service -> more in flight), which is the
    collapse a capacity search has to find.
    """

    prefill_a: float = 0.0
    prefill_b: float = 0.0
    prefill_c: float = 0.05
    decode_cadence_s: float = 0.02
    jitter_s: float = 0.0
    stall_every: int | None = None
    stall_s: float = 0.0
    burst_size: int = 1
    knee_qps: float | None = None
    knee_smoothing_s: float = 3.0
    abort_after_tokens: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.decode_cadence_s <= 0:
            raise ValueError("decode_cadence_s must be > 0")
        if not 0 <= self.jitter_s < self.decode_cadence_s:
            raise ValueError("jitter_s must satisfy 0 <= jitter < cadence")
        if self.burst_size < 1:
            raise ValueError("burst_size must be >= 1")
        if self.stall_every is not None and self.stall_every < 1:
            raise ValueError("stall_every must be >= 1")

    def prefill_time(self, prompt_tokens: int) -> float:
        return (self.prefill_a * prompt_tokens + self.prefill_b) * prompt_tokens + self.prefill_c

    def base_service_time(self, prompt_tokens: int, max_tokens: int) -> float:
        return self.prefill_time(prompt_tokens) + (max_tokens - 1) * self.decode_cadence_s

    def to_obj(self) -> dict:
        return {
            "prefill_a": self.prefill_a,
            "prefill_b": self.prefill_b,
            "prefill_c": self.prefill_c,
            "decode_cadence_s": self.decode_cadence_s,
            "jitter_s": self.jitter_s,
            "stall_every": self.stall_every,
            "stall_s": self.stall_s,
            "burst_size": self.burst_size,
            "knee_qps": self.knee_qps,
            "knee_smoothing_s": self.knee_smoothing_s,
            "abort_after_tokens": self.abort_after_tokens,
            "seed": self.seed,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "MockProfile":
        return cls(**{k: obj[k] for k in obj})


def load_profile(path: str | Path) -> MockProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return MockProfile.from_obj(json.load(fh))


def save_profile(profile: MockProfile, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(profile.to_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emission_schedule(
    profile: MockProfile,
    prompt_len: int,
    max_tokens: int,
    overload_factor: float = 1.0,
    seed_salt: int = 0,
) -> list[tuple[float, int]]:
    """Pure schedule of (offset from request receipt, token count) events.

    The first token lands at the prefill time; each later token advances the
    clock by one cadence step (jittered, seeded, scaled by the overload
    factor), a stall adds its pause after every k-th token, and burst grouping
    packs ``burst_size`` consecutive tokens into one event stamped at the
    group's last token. Deterministic given (profile, arguments).
    """
    rng = random.Random(profile.seed * 1000003 + seed_salt)
    offsets_at = profile.prefill_time(prompt_len)
    events: list[tuple[float, int]] = [(offsets_at, 1)]
    emitted = 1
    group: int = 0
    while emitted < max_tokens:
        jitter = rng.uniform(-profile.jitter_s, profile.jitter_s) if profile.jitter_s else 0.0
        gap = (profile.decode_cadence_s + jitter) * overload_factor
        if profile.stall_every and emitted % profile.stall_every == 0:
            gap += profile.stall_s
        offsets_at += gap
        emitted += 1
        group += 1
        if group == profile.burst_size or emitted == max_tokens:
            events.append((offsets_at, group))
            group = 0
    return events


# ---------------------------------------------------------------------------
# HTTP server
# ---------------------------------------------------------------------------


@dataclass
class EmissionRecord:
    """Ground-truth log entry for one served emission (or request receipt)."""

    request_id: str
    kind: str  # "receipt" | "emit" | "done"
    timestamp: float  # monotonic seconds
    token_count: int = 0


class _Handler(BaseHTTPRequestHandler):
    server: "MockServer"

    def log_message(self, fmt, *args):  # noqa: D102 - silence default logging
        pass

    def do_POST(self):
        accept_time = self.server.take_accept_time(self.connection)
        if self.path != self.server.api_path:
            self.send_error(404, "unknown path")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length)) if length else {}
            if not isinstance(body, dict) or "model" not in body:
                raise ValueError("body must be an object with a model field")
            max_tokens = int(body.get("max_tokens", 256))
            if max_tokens < 1:
                raise ValueError("max_tokens must be >= 1")
        except (ValueError, json.JSONDecodeError) as exc:
            self.send_error(400, f"malformed request: {exc}")
            return

        declared = self.headers.get(PROMPT_COUNT_HEADER)
        if declared is not None:
            prompt_tokens = max(1, int(declared))
        else:
            content = ""
            for msg in body.get("messages", []):
                content += msg.get("content", "")
            prompt_tokens = max(1, math.ceil(len(content) / CHARS_PER_TOKEN))
        request_id = self.headers.get(REQUEST_ID_HEADER, f"anon-{id(self)}")

        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Connection", "close")
        self.end_headers()
        self._stream(request_id, prompt_tokens, max_tokens, accept_time)

    def _stream(self, request_id: str, prompt_tokens: int, max_tokens: int,
                accept_time: float) -> None:
        srv = self.server
        profile = srv.profile
        srv.record(EmissionRecord(request_id, "receipt", accept_time))
        salt = srv.next_salt()
        schedule = emission_schedule(profile, prompt_tokens, max_tokens, 1.0, salt)
        base_service = profile.base_service_time(prompt_tokens, max_tokens)

        srv.enter_flight()
        emitted = 0
        try:
            target = accept_time + schedule[0][0]
            prev_offset = schedule[0][0]
            for offset, count in schedule:
                if offset != prev_offset:
                    factor = srv.overload_factor(base_service)
                    target += (offset - prev_offset) * factor
                    prev_offset = offset
                sleep_until(target)
                payload = {
                    "id": request_id,
                    "object": "chat.completion.chunk",
                    "choices": [
                        {"index": 0, "delta": {"content": PLACEHOLDER_TOKEN * count}}
                    ],
                }
                self.wfile.write(b"data: " + json.dumps(payload).encode() + b"\n\n")
                self.wfile.flush()
                srv.record(EmissionRecord(request_id, "emit", time.monotonic(), count))
                emitted += count
                if (
                    profile.abort_after_tokens is not None
                    and emitted >= profile.abort_after_tokens
                ):
                    return  # close without [DONE]: simulates a mid-stream failure
            self.wfile.write(b"data: [DONE]\n\n")
            self.wfile.flush()
            srv.record(EmissionRecord(request_id, "done", time.monotonic()))
        except (BrokenPipeError, ConnectionResetError):
            pass  # client went away; nothing to salvage
        finally:
            srv.leave_flight()


class MockServer(ThreadingHTTPServer):
    """Streaming mock endpoint bound to (host, port); port 0 picks a free one."""

    daemon_threads = True
    disable_nagle_algorithm = True  # per-event delivery must not be batched

    def __init__(
        self,
        profile: MockProfile,
        host: str = "127.0.0.1",
        port: int = 0,
        api_path: str = "/v1/chat/completions",
        emission_log_path: str | Path | None = None,
        record_emissions: bool = False,
    ):
        super().__init__((host, port), _Handler)
        self.profile = profile
        self.api_path = api_path
        self._accept_times: dict = {}
        self._flight_lock = threading.Lock()
        self._in_flight = 0
        self._ewma = 0.0
        self._ewma_t = time.monotonic()
        self._salt = 0
        self._record_lock = threading.Lock()
        self._records: list[EmissionRecord] = [] if record_emissions else None
        self._log_fh = (
            open(emission_log_path, "w", encoding="utf-8", newline="\n")
            if emission_log_path
            else None
        )
        self._thread: threading.Thread | None = None

    # -- request plumbing ---------------------------------------------------

    def get_request(self):
        request, addr = super().get_request()
        # Anchor prefill latency at the accept instant, before the handler
        # thread spins up, so client-observed TTFT matches the planted curve.
        self._accept_times[request] = time.monotonic()
        return request, addr

    def take_accept_time(self, connection) -> float:
        return self._accept_times.pop(connection, time.monotonic())

    def next_salt(self) -> int:
        with self._flight_lock:
            self._salt += 1
            return self._salt

    # -- load accounting ----------------------------------------------------

    def enter_flight(self):
        with self._flight_lock:
            self._in_flight += 1

    def leave_flight(self):
        with self._flight_lock:
            self._in_flight -= 1

    @property
    def in_flight(self) -> int:
        with self._flight_lock:
            return self._in_flight

    def overload_factor(self, base_service_time: float) -> float:
        profile = self.profile
        if profile.knee_qps is None:
            return 1.0
        with self._flight_lock:
            now = time.monotonic()
            dt = now - self._ewma_t
            alpha = 1.0 - math.exp(-dt / profile.knee_smoothing_s)
            self._ewma += alpha * (self._in_flight - self._ewma)
            self._ewma_t = now
            allowed = profile.knee_qps * base_service_time
            return max(1.0, self._ewma / allowed)

    # -- ground-truth log ---------------------------------------------------

    def record(self, rec: EmissionRecord):
        if self._records is None and self._log_fh is None:
            return
        with self._record_lock:
            if self._records is not None:
                self._records.append(rec)
            if self._log_fh is not None:
                self._log_fh.write(
                    json.dumps(
                        {
                            "request_id": rec.request_id,
                            "kind": rec.kind,
                            "timestamp": rec.timestamp,
                            "token_count": rec.token_count,
                        },
                        sort_keys=True,
                    )
                )
                self._log_fh.write("\n")
                self._log_fh.flush()

    def emissions(self, request_id: str | None = None) -> list[EmissionRecord]:
        with self._record_lock:
            records = list(self._records or [])
        if request_id is not None:
            records = [r for r in records if r.request_id == request_id]
        return records

    # -- lifecycle ----------------------------------------------------------

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://{self.server_address[0]}:{self.port}"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=10)
        self.server_close()
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None


def serve(
    profile: MockProfile,
    port: int,
    host: str = "127.0.0.1",
    emission_log_path: str | Path | None = None,
) -> None:
    """Serve until interrupted (CLI entry point)."""
    server = MockServer(profile, host=host, port=port,
                        emission_log_path=emission_log_path)
    print(f"mock server listening on {server.base_url} "
          f"(cadence {profile.decode_cadence_s * 1000:.1f} ms)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
