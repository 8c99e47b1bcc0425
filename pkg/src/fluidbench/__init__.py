"""Benchmark harness for streaming token-generation endpoints.

Records per-token-event timestamps under generated load and scores them with
conventional latency metrics and the deadline-based fluidity index, including
SLO-constrained solvers for the sustainable token rate and request capacity.
"""

from .client import EndpointConfig, dispatch_request, run_load
from .metrics import (
    DEADLINE_TIERS,
    DeadlineConfig,
    FluidityResult,
    cdf_points,
    deadline_timeline_oracle,
    fluidity_index,
    fluidity_of_trace,
    normalized_latency,
    percentile,
    scheduling_delay_estimate,
    tpot,
    ttft,
)
from .mockserver import MockProfile, MockServer, emission_schedule
from .prefill import (
    PrefillCurve,
    ProfileSample,
    fit_quadratic,
    predict_prefill_time,
    profile_prefill,
)
from .solver import (
    CapacityResult,
    DeadlineSearchResult,
    FluidRateResult,
    SloSpec,
    capacity_search,
    fluid_rate,
    fluidity_sweep,
    min_feasible_deadline,
    slo_satisfied_fraction,
)
from .trace import (
    RequestTrace,
    RunMetadata,
    RunRecord,
    TokenEvent,
    inter_token_times,
    read_run,
    write_run,
)
from .workload import (
    ArrivalSchedule,
    WorkloadSpec,
    generate_requests,
    poisson_schedule,
    uniform_schedule,
)

__version__ = "0.1.0"
