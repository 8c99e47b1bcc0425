import http.client
import json

import pytest

from fluidbench.client import dispatch_request
from fluidbench.metrics import DeadlineConfig, deadline_timeline_oracle, fluidity_index
from fluidbench.mockserver import (
    MockProfile,
    emission_schedule,
    load_profile,
    save_profile,
)

from conftest import endpoint_for


class TestEmissionSchedule:
    def test_plain_cadence(self):
        profile = MockProfile(prefill_c=0.1, decode_cadence_s=0.02)
        schedule = emission_schedule(profile, prompt_len=0, max_tokens=5)
        offsets = [t for t, _ in schedule]
        counts = [n for _, n in schedule]
        assert offsets == pytest.approx([0.1, 0.12, 0.14, 0.16, 0.18])
        assert counts == [1, 1, 1, 1, 1]

    def test_prefill_curve_applied(self):
        profile = MockProfile(prefill_a=1e-7, prefill_b=2e-4, prefill_c=0.05,
                              decode_cadence_s=0.02)
        schedule = emission_schedule(profile, prompt_len=1000, max_tokens=1)
        assert schedule[0][0] == pytest.approx(0.35)

    def test_burst_grouping(self):
        profile = MockProfile(prefill_c=0.1, decode_cadence_s=0.02, burst_size=3)
        schedule = emission_schedule(profile, prompt_len=0, max_tokens=7)
        assert schedule[0] == (pytest.approx(0.1), 1)
        assert schedule[1][1] == 3 and schedule[2][1] == 3
        assert schedule[1][0] == pytest.approx(0.16)
        assert schedule[2][0] == pytest.approx(0.22)

    def test_partial_final_burst(self):
        profile = MockProfile(prefill_c=0.1, decode_cadence_s=0.02, burst_size=4)
        schedule = emission_schedule(profile, prompt_len=0, max_tokens=6)
        assert [n for _, n in schedule] == [1, 4, 1]
        assert sum(n for _, n in schedule) == 6

    def test_stall_gaps(self):
        profile = MockProfile(prefill_c=0.1, decode_cadence_s=0.02,
                              stall_every=10, stall_s=0.5)
        schedule = emission_schedule(profile, prompt_len=0, max_tokens=25)
        offsets = [t for t, _ in schedule]
        gaps = [b - a for a, b in zip(offsets, offsets[1:])]
        # Gaps following the 10th and 20th token carry the stall.
        assert gaps[9] == pytest.approx(0.52)
        assert gaps[19] == pytest.approx(0.52)
        assert all(g == pytest.approx(0.02) for i, g in enumerate(gaps)
                   if i not in (9, 19))

    def test_overload_scales_decode_not_prefill(self):
        profile = MockProfile(prefill_c=0.1, decode_cadence_s=0.02)
        schedule = emission_schedule(profile, prompt_len=0, max_tokens=3,
                                     overload_factor=2.0)
        offsets = [t for t, _ in schedule]
        assert offsets == pytest.approx([0.1, 0.14, 0.18])

    def test_deterministic_given_seed(self):
        profile = MockProfile(prefill_c=0.05, decode_cadence_s=0.02,
                              jitter_s=0.005, seed=11)
        a = emission_schedule(profile, 100, 50)
        b = emission_schedule(profile, 100, 50)
        assert a == b
        c = emission_schedule(profile, 100, 50, seed_salt=1)
        assert a != c

    def test_jitter_bounded(self):
        profile = MockProfile(prefill_c=0.05, decode_cadence_s=0.02,
                              jitter_s=0.005, seed=1)
        offsets = [t for t, _ in emission_schedule(profile, 10, 200)]
        gaps = [b - a for a, b in zip(offsets, offsets[1:])]
        assert all(0.015 - 1e-9 <= g <= 0.025 + 1e-9 for g in gaps)

    def test_stall_schedule_feeds_deadline_walk(self):
        # Cadence equal to the deadline leaves no slack; each 0.5 s stall then
        # costs floor((0.6 - 0 - 0.1)/0.1) + 1 = 6 misses. 25 tokens with
        # stalls after tokens 10 and 20: 23 met + 12 missed = 35 total.
        profile = MockProfile(prefill_c=0.2, decode_cadence_s=0.1,
                              stall_every=10, stall_s=0.5)
        schedule = emission_schedule(profile, prompt_len=0, max_tokens=25)
        offsets = [t for t, _ in schedule]
        series = [offsets[0]] + [b - a for a, b in zip(offsets, offsets[1:])]
        cfg = DeadlineConfig(decode_deadline=0.1, scheduling_slack=0.0,
                             prefill_override=0.2)
        oracle = deadline_timeline_oracle(series, cfg, 1)
        fast = fluidity_index(series, cfg, 1)
        assert (oracle.total_deadlines, oracle.missed_deadlines) == (35, 12)
        assert (fast.total_deadlines, fast.missed_deadlines) == (35, 12)


class TestProfileValidation:
    def test_invalid_profiles(self):
        with pytest.raises(ValueError):
            MockProfile(decode_cadence_s=0.0)
        with pytest.raises(ValueError):
            MockProfile(decode_cadence_s=0.02, jitter_s=0.02)
        with pytest.raises(ValueError):
            MockProfile(burst_size=0)
        with pytest.raises(ValueError):
            MockProfile(stall_every=0)

    def test_profile_round_trip(self, tmp_path):
        profile = MockProfile(prefill_a=1e-7, prefill_b=2e-4, prefill_c=0.05,
                              decode_cadence_s=0.02, jitter_s=0.001,
                              stall_every=10, stall_s=0.5, burst_size=2,
                              knee_qps=4.0, seed=3)
        path = tmp_path / "profile.json"
        save_profile(profile, path)
        assert load_profile(path) == profile


class TestServedStream:
    def test_protocol_and_ground_truth_agreement(self, start_mock):
        profile = MockProfile(prefill_c=0.05, decode_cadence_s=0.02)
        server = start_mock(profile)
        endpoint = endpoint_for(server)
        trace = dispatch_request(endpoint, "hello world", 10,
                                 prompt_tokens=50, request_id="conform-1",
                                 epoch=0.0)
        assert trace.status == "completed"
        assert len(trace.events) == 10
        assert all(ev.token_count == 1 for ev in trace.events)

        emits = server.emissions("conform-1")
        assert [r.kind for r in emits][0] == "receipt"
        assert [r.kind for r in emits][-1] == "done"
        emit_ts = [r.timestamp for r in emits if r.kind == "emit"]
        assert len(emit_ts) == 10
        assert sum(r.token_count for r in emits if r.kind == "emit") == 10

        # Client-observed gaps against ground-truth gaps: medians must agree
        # within the documented loopback tolerance (5 ms).
        client_gaps = sorted(
            b.timestamp - a.timestamp
            for a, b in zip(trace.events, trace.events[1:])
        )
        truth_gaps = sorted(b - a for a, b in zip(emit_ts, emit_ts[1:]))
        median_client = client_gaps[len(client_gaps) // 2]
        median_truth = truth_gaps[len(truth_gaps) // 2]
        assert abs(median_client - median_truth) < 0.005
        assert abs(median_client - 0.02) < 0.005

    def test_declared_prompt_count_drives_prefill(self, start_mock):
        profile = MockProfile(prefill_a=1e-7, prefill_b=2e-4, prefill_c=0.05,
                              decode_cadence_s=0.005)
        server = start_mock(profile)
        endpoint = endpoint_for(server)
        trace = dispatch_request(endpoint, "short text", 1,
                                 prompt_tokens=1000, request_id="declared-1",
                                 epoch=0.0)
        observed_ttft = trace.events[0].timestamp - trace.dispatch_time
        assert observed_ttft == pytest.approx(0.35, abs=0.02)

    def test_served_gaps_match_pure_schedule(self, start_mock):
        profile = MockProfile(prefill_c=0.02, decode_cadence_s=0.03)
        server = start_mock(profile)
        endpoint = endpoint_for(server)
        trace = dispatch_request(endpoint, "x", 8, prompt_tokens=10,
                                 request_id="sched-1", epoch=0.0)
        schedule = emission_schedule(profile, 10, 8)
        expected_gaps = [b[0] - a[0] for a, b in zip(schedule, schedule[1:])]
        observed_gaps = [b.timestamp - a.timestamp
                         for a, b in zip(trace.events, trace.events[1:])]
        deviations = sorted(abs(o - e) for o, e in zip(observed_gaps, expected_gaps))
        assert deviations[len(deviations) // 2] < 0.005

    def test_malformed_request_rejected(self, start_mock):
        server = start_mock(MockProfile(prefill_c=0.01, decode_cadence_s=0.01))
        conn = http.client.HTTPConnection("127.0.0.1", server.port, timeout=5)
        conn.request("POST", "/v1/chat/completions", body=b"{not json",
                     headers={"Content-Type": "application/json",
                              "Content-Length": "9"})
        resp = conn.getresponse()
        assert resp.status == 400
        conn.close()

    def test_unknown_path_rejected(self, start_mock):
        server = start_mock(MockProfile(prefill_c=0.01, decode_cadence_s=0.01))
        conn = http.client.HTTPConnection("127.0.0.1", server.port, timeout=5)
        conn.request("POST", "/nope", body=json.dumps({"model": "m"}))
        resp = conn.getresponse()
        assert resp.status == 404
        conn.close()

    def test_stream_ends_with_done_frame(self, start_mock):
        server = start_mock(MockProfile(prefill_c=0.01, decode_cadence_s=0.005))
        conn = http.client.HTTPConnection("127.0.0.1", server.port, timeout=5)
        body = json.dumps({"model": "m", "messages": [], "max_tokens": 3,
                           "stream": True})
        conn.request("POST", "/v1/chat/completions", body=body,
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        raw = resp.read().decode()
        frames = [f for f in raw.split("\n\n") if f]
        assert frames[-1] == "data: [DONE]"
        assert len(frames) == 4  # 3 token frames + DONE
        conn.close()

    def test_concurrent_streams(self, start_mock):
        import threading
        profile = MockProfile(prefill_c=0.02, decode_cadence_s=0.01)
        server = start_mock(profile)
        endpoint = endpoint_for(server)
        results = [None] * 8

        def go(i):
            results[i] = dispatch_request(endpoint, "x", 5, prompt_tokens=10,
                                          request_id=f"conc-{i}", epoch=0.0)

        threads = [threading.Thread(target=go, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r.status == "completed" and len(r.events) == 5 for r in results)
