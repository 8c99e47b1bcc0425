import math
import random

import pytest

from fluidbench.metrics import DeadlineConfig
from fluidbench.solver import (
    CapacitySearchError,
    SloSpec,
    capacity_search,
    fluid_rate,
    fluidity_sweep,
    min_feasible_deadline,
    slo_satisfied_fraction,
)
from fluidbench.trace import RequestTrace

from _synth import random_run, synth_run, synth_trace


def config_template(d_p=0.2, slack=0.0, d_d=0.05):
    return DeadlineConfig(decode_deadline=d_d, scheduling_slack=slack,
                          prefill_override=d_p)


def sweep_min_feasible(run, template, slo, resolution=0.001, max_deadline=10.0):
    """Linear-scan oracle: first grid deadline satisfying the SLO."""
    k = 1
    while k * resolution <= max_deadline + 1e-9:
        cfg = template.with_decode_deadline(k * resolution)
        if slo_satisfied_fraction(run, cfg, slo) >= slo.request_fraction:
            return k * resolution
        k += 1
    return None


class TestSatisfiedFraction:
    def test_counts_errored_against(self):
        traces = [synth_trace(f"g{i}", [0.1, 0.01, 0.01]) for i in range(99)]
        traces.append(synth_trace("bad", [], status="errored"))
        run = synth_run(traces)
        fraction = slo_satisfied_fraction(run, config_template(), SloSpec())
        assert fraction == pytest.approx(0.99)

    def test_all_perfect(self):
        run = synth_run([synth_trace(f"g{i}", [0.1, 0.01]) for i in range(10)])
        assert slo_satisfied_fraction(run, config_template(), SloSpec()) == 1.0

    def test_threshold_counting(self):
        # Indices: eight at 1.0, one at 0.85, one at 0.5 -> 8/10 reach 0.9.
        traces = [synth_trace(f"p{i}", [0.1] + [0.01] * 9) for i in range(8)]
        # 20 tokens, 3 misses -> 20/23 ~ 0.8696 < 0.9; build exact: miss once
        # out of 10 via one gap of 2 deadlines and no slack.
        traces.append(synth_trace("mid", [0.1] + [0.05] * 16 + [0.125]))
        traces.append(synth_trace("low", [0.1] + [0.05] * 3 + [0.4]))
        run = synth_run(traces)
        cfg = config_template(d_p=0.1, d_d=0.05)
        fraction = slo_satisfied_fraction(run, cfg, SloSpec(fluidity_threshold=0.9))
        assert fraction == pytest.approx(0.8)

    def test_empty_run_rejected(self):
        with pytest.raises(ValueError):
            slo_satisfied_fraction(synth_run([]), config_template(), SloSpec())


class TestMinFeasibleDeadline:
    def test_matches_sweep_on_random_runs(self):
        rng = random.Random(77)
        slo = SloSpec(fluidity_threshold=0.9, request_fraction=0.99)
        template = config_template(d_p=0.3)
        for _ in range(40):
            run = random_run(rng)
            result = min_feasible_deadline(run, template, slo)
            expected = sweep_min_feasible(run, template, slo, max_deadline=0.5)
            assert not result.saturated
            assert result.deadline_s == pytest.approx(expected)

    def test_even_cadence_run(self):
        # Every request emits exactly every 20 ms after a prefill within D_p.
        traces = [synth_trace(f"c{i}", [0.1] + [0.02] * 40) for i in range(20)]
        run = synth_run(traces)
        template = config_template(d_p=0.1)
        result = min_feasible_deadline(run, template, SloSpec())
        assert result.deadline_s == pytest.approx(0.02)

    def test_outlier_excluded_by_request_fraction(self):
        traces = [synth_trace(f"c{i}", [0.1] + [0.02] * 40) for i in range(199)]
        traces.append(synth_trace("path", [0.1] + [5.0] * 10))
        run = synth_run(traces)
        template = config_template(d_p=0.1)
        slo = SloSpec(request_fraction=0.99)
        result = min_feasible_deadline(run, template, slo)
        # 199/200 = 0.995 >= 0.99: the pathological request cannot drag D_d up.
        assert result.deadline_s == pytest.approx(0.02)

    def test_all_zero_gaps_hits_resolution_floor(self):
        run = synth_run([synth_trace("z", [0.0] * 10)])
        result = min_feasible_deadline(run, config_template(d_p=0.1), SloSpec())
        assert result.deadline_s == pytest.approx(0.001)
        assert not result.saturated

    def test_saturated_flag(self):
        run = synth_run([synth_trace("slow", [0.1] + [11.0] * 30)])
        result = min_feasible_deadline(run, config_template(d_p=0.1), SloSpec())
        assert result.saturated
        assert result.deadline_s == pytest.approx(10.0)

    def test_deterministic(self):
        rng = random.Random(5)
        run = random_run(rng)
        template = config_template()
        a = min_feasible_deadline(run, template, SloSpec())
        b = min_feasible_deadline(run, template, SloSpec())
        assert a == b


class TestFluidRate:
    def test_inverse_identity(self):
        rng = random.Random(13)
        for _ in range(20):
            run = random_run(rng)
            result = fluid_rate(run, config_template(d_p=0.3), SloSpec())
            if not result.saturated:
                assert result.tokens_per_s == 1.0 / result.deadline_s

    def test_known_deadlines(self):
        traces = [synth_trace(f"c{i}", [0.1] + [0.02] * 40) for i in range(10)]
        result = fluid_rate(synth_run(traces), config_template(d_p=0.1), SloSpec())
        assert result.tokens_per_s == pytest.approx(50.0)
        # Strict 25 ms tier corresponds to 40 tokens/s.
        assert 1.0 / 0.025 == pytest.approx(40.0)

    def test_saturated_rate_zero(self):
        run = synth_run([synth_trace("slow", [0.1] + [11.0] * 30)])
        result = fluid_rate(run, config_template(d_p=0.1), SloSpec())
        assert result.saturated and result.tokens_per_s == 0.0


class TestFluiditySweep:
    def test_non_decreasing(self):
        rng = random.Random(21)
        grid = [0.002 * k for k in range(1, 51)]
        for _ in range(20):
            run = random_run(rng)
            points = fluidity_sweep(run, config_template(), SloSpec(), grid)
            fractions = [f for _, f in points]
            assert fractions == sorted(fractions)
            assert [d for d, _ in points] == grid


def step_runner(knee: float, n: int = 60):
    """Deterministic probe factory: fluid below the knee, broken above it."""

    def runner(qps: float):
        gaps = [0.02] * 20 if qps <= knee else [0.02, 0.5] * 10
        traces = [synth_trace(f"q{i}", [0.05] + list(gaps)) for i in range(n)]
        return synth_run(traces, target_qps=qps)

    return runner


class TestCapacitySearch:
    def test_converges_to_knee(self):
        slo = SloSpec(decode_deadline=0.025)
        result = capacity_search(
            step_runner(4.0), config_template(d_p=0.1), slo,
            qps_bounds=(2.0, 8.0), relative_tolerance=0.1, warmup_responses=5,
        )
        assert result.status == "converged"
        assert 3.6 <= result.capacity_qps <= 4.4
        # Trajectory consistency: below capacity passed, above failed.
        for probe in result.trajectory:
            if probe.qps <= result.capacity_qps:
                assert probe.satisfied_fraction >= slo.request_fraction
            else:
                assert probe.satisfied_fraction < slo.request_fraction

    def test_unsaturated(self):
        slo = SloSpec(decode_deadline=0.025)
        result = capacity_search(
            step_runner(100.0), config_template(d_p=0.1), slo,
            qps_bounds=(2.0, 8.0), warmup_responses=5,
        )
        assert result.status == "unsaturated"
        assert result.capacity_qps == 8.0
        assert len(result.trajectory) == 2

    def test_infeasible_at_lower_bound(self):
        slo = SloSpec(decode_deadline=0.025)
        result = capacity_search(
            step_runner(0.5), config_template(d_p=0.1), slo,
            qps_bounds=(2.0, 8.0), warmup_responses=5,
        )
        assert result.status == "infeasible_at_lower_bound"
        assert result.capacity_qps == 2.0
        assert len(result.trajectory) == 1

    def test_warmup_discard(self):
        def runner(qps):
            cold = [synth_trace(f"w{i}", [0.05] + [0.9] * 5) for i in range(20)]
            warm = [synth_trace(f"h{i}", [0.05] + [0.02] * 20, dispatch=10.0 + i)
                    for i in range(40)]
            return synth_run(cold + warm, target_qps=qps)

        slo = SloSpec(decode_deadline=0.025)
        result = capacity_search(runner, config_template(d_p=0.1), slo,
                                 qps_bounds=(1.0, 2.0), warmup_responses=20)
        assert result.status == "unsaturated"
        assert result.trajectory[0].satisfied_fraction == 1.0
        assert result.trajectory[0].scored_requests == 40

    def test_runner_failure_carries_trajectory(self):
        calls = []

        def runner(qps):
            calls.append(qps)
            if len(calls) > 1:
                raise ConnectionError("endpoint went away")
            return step_runner(100.0)(qps)

        with pytest.raises(CapacitySearchError) as excinfo:
            capacity_search(runner, config_template(d_p=0.1),
                            SloSpec(decode_deadline=0.025),
                            qps_bounds=(2.0, 8.0), warmup_responses=5)
        assert len(excinfo.value.trajectory) == 1

    def test_requires_decode_deadline(self):
        with pytest.raises(ValueError):
            capacity_search(step_runner(4.0), config_template(), SloSpec(),
                            qps_bounds=(1.0, 2.0))

    def test_geometric_bracket_tolerance(self):
        slo = SloSpec(decode_deadline=0.025)
        result = capacity_search(
            step_runner(4.0), config_template(d_p=0.1), slo,
            qps_bounds=(2.0, 8.0), relative_tolerance=0.05, warmup_responses=5,
        )
        probed = [p.qps for p in result.trajectory]
        passing = [q for q in probed if q <= 4.0]
        failing = [q for q in probed if q > 4.0]
        assert max(passing) == result.capacity_qps
        assert min(failing) / max(passing) <= 1.0 + 0.05 + 1e-6 or math.isclose(
            min(failing), max(passing), rel_tol=0.06
        )
