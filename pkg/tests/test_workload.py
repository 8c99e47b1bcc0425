import pytest

from fluidbench.workload import (
    ArrivalSchedule,
    WorkloadSpec,
    generate_requests,
    poisson_schedule,
    synth_prompt,
    uniform_schedule,
)


class TestGenerateRequests:
    def test_uniform_range_containment_and_determinism(self):
        spec = WorkloadSpec(count=100, seed=7, uniform_range=(256, 8192))
        first = generate_requests(spec)
        second = generate_requests(WorkloadSpec(count=100, seed=7,
                                                uniform_range=(256, 8192)))
        assert first == second
        assert len(first) == 100
        assert all(256 <= p <= 8192 for p, _ in first)
        assert all(m == 256 for _, m in first)

    def test_different_seed_differs(self):
        a = generate_requests(WorkloadSpec(count=50, seed=1))
        b = generate_requests(WorkloadSpec(count=50, seed=2))
        assert a != b

    def test_fixed_list_cycles(self):
        spec = WorkloadSpec(count=3, fixed_lengths=[512])
        assert [p for p, _ in generate_requests(spec)] == [512, 512, 512]
        spec = WorkloadSpec(count=5, fixed_lengths=[100, 200])
        assert [p for p, _ in generate_requests(spec)] == [100, 200, 100, 200, 100]

    def test_degenerate_range(self):
        spec = WorkloadSpec(count=10, uniform_range=(1000, 1000))
        assert all(p == 1000 for p, _ in generate_requests(spec))

    def test_length_file_source(self, tmp_path):
        path = tmp_path / "lengths.txt"
        path.write_text("300\n600\n\n900\n")
        spec = WorkloadSpec(count=4, length_file=path)
        assert [p for p, _ in generate_requests(spec)] == [300, 600, 900, 300]

    def test_empty_length_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("\n")
        with pytest.raises(ValueError):
            generate_requests(WorkloadSpec(count=1, length_file=path))

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            WorkloadSpec(count=0)
        with pytest.raises(ValueError):
            WorkloadSpec(count=1, uniform_range=(0, 10))
        with pytest.raises(ValueError):
            WorkloadSpec(count=1, uniform_range=(10, 5))
        with pytest.raises(ValueError):
            WorkloadSpec(count=1, uniform_range=(1, 2), fixed_lengths=[3])


class TestSchedules:
    def test_poisson_mean_inter_arrival(self):
        schedule = poisson_schedule(qps=2.0, count=10000, seed=42)
        mean_gap = schedule.offsets[-1] / len(schedule.offsets)
        assert mean_gap == pytest.approx(0.5, rel=0.02)

    def test_poisson_deterministic(self):
        a = poisson_schedule(3.0, 100, seed=9)
        b = poisson_schedule(3.0, 100, seed=9)
        assert a.offsets == b.offsets

    def test_single_offset(self):
        schedule = poisson_schedule(1.0, 1, seed=0)
        assert len(schedule) == 1
        assert schedule.offsets[0] >= 0

    def test_offsets_non_decreasing(self):
        schedule = poisson_schedule(5.0, 500, seed=3)
        assert all(b >= a for a, b in zip(schedule.offsets, schedule.offsets[1:]))

    def test_uniform_spacing(self):
        schedule = uniform_schedule(4.0, 8)
        gaps = [b - a for a, b in zip(schedule.offsets, schedule.offsets[1:])]
        assert gaps == pytest.approx([0.25] * 7)

    def test_invalid_qps(self):
        with pytest.raises(ValueError):
            poisson_schedule(0.0, 10, seed=0)
        with pytest.raises(ValueError):
            uniform_schedule(-1.0, 10)

    def test_schedule_rejects_decreasing(self):
        with pytest.raises(ValueError):
            ArrivalSchedule(offsets=[1.0, 0.5], target_qps=1.0)


class TestSynthPrompt:
    def test_approximate_length(self):
        for tokens in (16, 256, 4096):
            text = synth_prompt(tokens)
            assert len(text) == tokens * 4
