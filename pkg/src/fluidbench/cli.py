"""Command-line entry points.

Subcommands:
  profile-prefill   measure isolated first-token latency and fit the curve
  run               execute one load run, persist the trace file, emit reports
  analyze           re-analyze a stored run file (pure, reproducible)
  capacity          search the maximum sustainable request rate under an SLO
  mock-serve        run the deterministic mock endpoint

Exit codes: 0 success, 1 usage/input error, 2 endpoint or protocol failure,
3 SLO infeasible at the lower search bound.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import client as client_mod
from . import mockserver, prefill, report, solver, trace, workload
from .metrics import DEADLINE_TIERS, DeadlineConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ENDPOINT = 2
EXIT_INFEASIBLE = 3

DEFAULT_SWEEP = "0.005:0.25:0.005"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the harness contract reserves 2 for
    endpoint failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class UsageError(ValueError):
    pass


def _add_endpoint_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("endpoint")
    g.add_argument("--base-url", required=True, help="endpoint base URL")
    g.add_argument("--model", default="mock-model", help="model name to request")
    g.add_argument("--api-path", default="/v1/chat/completions")
    g.add_argument("--auth-env", default=None,
                   help="environment variable holding the bearer token")
    g.add_argument("--timeout", type=float, default=300.0,
                   help="per-request timeout in seconds")
    g.add_argument("--token-count-mode", default=client_mod.TOKEN_COUNT_PER_CHUNK,
                   choices=[client_mod.TOKEN_COUNT_PER_CHUNK,
                            client_mod.TOKEN_COUNT_CHARS])


def _endpoint_from_args(args) -> client_mod.EndpointConfig:
    return client_mod.EndpointConfig(
        base_url=args.base_url,
        model=args.model,
        api_path=args.api_path,
        auth_env=args.auth_env,
        timeout_s=args.timeout,
        token_count_mode=args.token_count_mode,
    )


def _add_deadline_flags(p: argparse.ArgumentParser, require_decode: bool = True):
    g = p.add_argument_group("deadline")
    g.add_argument("--deadline", choices=sorted(DEADLINE_TIERS),
                   help="decode-deadline tier preset")
    g.add_argument("--decode-deadline", type=float,
                   help="decode deadline in seconds (overrides --deadline)")
    g.add_argument("--scheduling-slack", type=float, default=0.05)
    g.add_argument("--prefill-curve", help="fitted prefill curve file")
    g.add_argument("--prefill-deadline", type=float,
                   help="fixed prefill deadline in seconds")
    p.set_defaults(_require_decode=require_decode)


def _deadline_from_args(args) -> DeadlineConfig:
    if args.decode_deadline is not None:
        decode = args.decode_deadline
    elif args.deadline is not None:
        decode = DEADLINE_TIERS[args.deadline]
    elif args._require_decode:
        raise UsageError("one of --decode-deadline / --deadline is required")
    else:
        decode = DEADLINE_TIERS["medium"]
    curve = None
    override = None
    if args.prefill_curve is not None and args.prefill_deadline is not None:
        raise UsageError("--prefill-curve and --prefill-deadline are exclusive")
    if args.prefill_curve is not None:
        curve = prefill.load_curve(args.prefill_curve)
    elif args.prefill_deadline is not None:
        override = args.prefill_deadline
    else:
        raise UsageError("one of --prefill-curve / --prefill-deadline is required")
    return DeadlineConfig(
        decode_deadline=decode,
        scheduling_slack=args.scheduling_slack,
        prefill_curve=curve,
        prefill_override=override,
    )


def _add_slo_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("slo")
    g.add_argument("--fluidity-threshold", type=float, default=0.9)
    g.add_argument("--request-fraction", type=float, default=0.99)


def _add_workload_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("workload")
    g.add_argument("--count", type=int, default=100, help="number of requests")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-output-tokens", type=int,
                   default=workload.DEFAULT_MAX_OUTPUT_TOKENS)
    g.add_argument("--prompt-range", default=None, metavar="LO:HI",
                   help="uniform prompt-length range (default 256:8192)")
    g.add_argument("--prompt-lengths", default=None,
                   help="comma-separated fixed prompt lengths (cycled)")
    g.add_argument("--prompt-length-file", default=None,
                   help="file of newline-delimited prompt lengths")


def _workload_from_args(args) -> workload.WorkloadSpec:
    uniform = None
    fixed = None
    if args.prompt_range is not None:
        lo, _, hi = args.prompt_range.partition(":")
        uniform = (int(lo), int(hi))
    if args.prompt_lengths is not None:
        fixed = [int(x) for x in args.prompt_lengths.split(",") if x.strip()]
    return workload.WorkloadSpec(
        count=args.count,
        max_output_tokens=args.max_output_tokens,
        seed=args.seed,
        uniform_range=uniform,
        fixed_lengths=fixed,
        length_file=args.prompt_length_file,
    )


def _parse_sweep(spec: str) -> list[float]:
    try:
        lo_s, hi_s, step_s = spec.split(":")
        lo, hi, step = float(lo_s), float(hi_s), float(step_s)
    except ValueError:
        raise UsageError(f"bad sweep spec {spec!r}, expected LO:HI:STEP")
    if lo <= 0 or step <= 0 or hi < lo:
        raise UsageError("sweep requires 0 < lo <= hi and step > 0")
    grid = []
    k = 0
    while True:
        v = lo + k * step
        if v > hi + 1e-12:
            break
        grid.append(round(v, 9))
        k += 1
    return grid


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_profile_prefill(args) -> int:
    endpoint = _endpoint_from_args(args)
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    if args.lengths:
        lengths = [int(x) for x in args.lengths.split(",") if x.strip()]
    else:
        lengths = list(prefill.DEFAULT_PROFILE_LENGTHS)
    samples, gaps = prefill.profile_prefill(endpoint, lengths, args.repeats)
    curve = prefill.fit_quadratic(samples)
    prefill.save_curve(curve, args.output)
    print(f"profiled {len(samples)} samples over {len(set(lengths))} lengths "
          f"({len(gaps)} failed probes)")
    for gap in gaps:
        print(f"  gap: length={gap['prompt_token_count']} repeat={gap['repeat']} "
              f"status={gap['status']}")
    print(f"fitted curve: a={curve.a:.6g} b={curve.b:.6g} c={curve.c:.6g} "
          f"rmse={curve.rmse * 1000:.3f} ms -> {args.output}")
    return EXIT_OK


def _cmd_run(args) -> int:
    endpoint = _endpoint_from_args(args)
    config = _deadline_from_args(args)
    slo = solver.SloSpec(fluidity_threshold=args.fluidity_threshold,
                         request_fraction=args.request_fraction)
    spec = _workload_from_args(args)
    requests = workload.generate_requests(spec)
    if args.arrival == "poisson":
        schedule = workload.poisson_schedule(args.qps, spec.count, spec.seed)
    else:
        schedule = workload.uniform_schedule(args.qps, spec.count)
    run = client_mod.run_load(endpoint, requests, schedule, workload_seed=spec.seed)
    trace.write_run(run, args.run_out)
    completed = len(run.completed())
    print(f"run complete: {completed}/{len(run.traces)} requests completed "
          f"-> {args.run_out}")
    if completed == 0:
        print("no request completed; endpoint unreachable or failing",
              file=sys.stderr)
        return EXIT_ENDPOINT
    bundle = report.build_report(run, config, slo, _parse_sweep(args.sweep),
                                 rate_resolution=args.rate_resolution)
    paths = report.write_report(bundle, args.report_dir)
    _print_summary(bundle)
    print(f"report written to {paths['summary'].parent}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    run_path = Path(args.run)
    if not run_path.exists():
        raise UsageError(f"run file not found: {run_path}")
    run = trace.read_run(run_path)
    config = _deadline_from_args(args)
    slo = solver.SloSpec(fluidity_threshold=args.fluidity_threshold,
                         request_fraction=args.request_fraction)
    bundle = report.build_report(run, config, slo, _parse_sweep(args.sweep),
                                 rate_resolution=args.rate_resolution)
    paths = report.write_report(bundle, args.report_dir)
    _print_summary(bundle)
    print(f"report written to {paths['summary'].parent}")
    return EXIT_OK


def _cmd_capacity(args) -> int:
    endpoint = _endpoint_from_args(args)
    config = _deadline_from_args(args)
    slo = solver.SloSpec(
        fluidity_threshold=args.fluidity_threshold,
        request_fraction=args.request_fraction,
        decode_deadline=config.decode_deadline,
    )
    spec = _workload_from_args(args)
    requests = workload.generate_requests(spec)

    def runner(qps: float) -> trace.RunRecord:
        # Same workload and arrival seed at every load level: the offered
        # rate is the only varying factor across probes.
        schedule = workload.poisson_schedule(qps, spec.count, spec.seed)
        return client_mod.run_load(endpoint, requests, schedule,
                                   workload_seed=spec.seed)

    result = solver.capacity_search(
        runner,
        config,
        slo,
        qps_bounds=(args.qps_min, args.qps_max),
        relative_tolerance=args.tolerance,
        warmup_responses=args.warmup,
    )
    obj = result.to_obj()
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
        print(f"capacity report -> {args.report}")
    print(f"capacity: {result.capacity_qps} QPS ({result.status})")
    for probe in result.trajectory:
        print(f"  probed {probe.qps} QPS -> satisfied "
              f"{probe.satisfied_fraction:.4f}")
    if result.status == "infeasible_at_lower_bound":
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_mock_serve(args) -> int:
    if args.profile:
        profile = mockserver.load_profile(args.profile)
    else:
        profile = mockserver.MockProfile(
            prefill_a=args.prefill_a,
            prefill_b=args.prefill_b,
            prefill_c=args.prefill_c,
            decode_cadence_s=args.cadence,
            jitter_s=args.jitter,
            stall_every=args.stall_every,
            stall_s=args.stall_s,
            burst_size=args.burst,
            knee_qps=args.knee_qps,
            seed=args.seed,
        )
    mockserver.serve(profile, args.port, emission_log_path=args.emission_log)
    return EXIT_OK


def _print_summary(bundle: report.ReportBundle) -> None:
    counts = bundle.request_counts
    print(f"requests: {counts['completed']} completed, {counts['errored']} errored, "
          f"{counts['timed_out']} timed out")
    for label, stats in (("ttft", bundle.ttft_stats), ("tbt", bundle.tbt_stats),
                         ("tpot", bundle.tpot_stats)):
        if stats:
            print(f"{label}: mean {stats['mean'] * 1000:.2f} ms | median "
                  f"{stats['median'] * 1000:.2f} ms | p99 {stats['p99'] * 1000:.2f} ms")
    fluid = bundle.fluid
    if fluid["saturated"]:
        print("fluid rate: saturated (no feasible deadline within bounds)")
    else:
        print(f"fluid rate: {fluid['tokens_per_s']:.2f} tokens/s "
              f"(min feasible deadline {fluid['min_feasible_deadline_s'] * 1000:.0f} ms)")
    print(f"slo satisfied fraction at configured deadline: "
          f"{bundle.slo_satisfied_fraction:.4f}")


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fluidbench",
                     description="Benchmark streaming token endpoints with "
                                 "deadline-based fluidity metrics")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("profile-prefill",
                       help="profile isolated prefill latency and fit the curve")
    _add_endpoint_flags(p)
    p.add_argument("--lengths", default=None,
                   help="comma-separated prompt lengths "
                        "(default: 10 log-spaced in 256..8192)")
    p.add_argument("--repeats", type=int, default=prefill.DEFAULT_REPEATS)
    p.add_argument("--output", required=True, help="curve file to write")
    p.set_defaults(func=_cmd_profile_prefill)

    p = sub.add_parser("run", help="execute one load run and report")
    _add_endpoint_flags(p)
    _add_workload_flags(p)
    _add_deadline_flags(p)
    _add_slo_flags(p)
    p.add_argument("--qps", type=float, required=True)
    p.add_argument("--arrival", choices=["poisson", "uniform"], default="poisson")
    p.add_argument("--run-out", required=True, help="trace file to write")
    p.add_argument("--report-dir", required=True)
    p.add_argument("--sweep", default=DEFAULT_SWEEP, metavar="LO:HI:STEP")
    p.add_argument("--rate-resolution", type=float, default=0.001)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("analyze", help="re-analyze a stored run file")
    _add_deadline_flags(p)
    _add_slo_flags(p)
    p.add_argument("--run", required=True, help="trace file to analyze")
    p.add_argument("--report-dir", required=True)
    p.add_argument("--sweep", default=DEFAULT_SWEEP, metavar="LO:HI:STEP")
    p.add_argument("--rate-resolution", type=float, default=0.001)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("capacity", help="search maximum sustainable QPS")
    _add_endpoint_flags(p)
    _add_workload_flags(p)
    _add_deadline_flags(p)
    _add_slo_flags(p)
    p.add_argument("--qps-min", type=float, required=True)
    p.add_argument("--qps-max", type=float, required=True)
    p.add_argument("--tolerance", type=float, default=0.1,
                   help="relative bracket tolerance")
    p.add_argument("--warmup", type=int, default=20,
                   help="responses discarded per probe")
    p.add_argument("--report", default=None, help="capacity report file")
    p.set_defaults(func=_cmd_capacity)

    p = sub.add_parser("mock-serve", help="run the deterministic mock endpoint")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--profile", default=None, help="mock profile JSON file")
    p.add_argument("--prefill-a", type=float, default=0.0)
    p.add_argument("--prefill-b", type=float, default=0.0)
    p.add_argument("--prefill-c", type=float, default=0.05)
    p.add_argument("--cadence", type=float, default=0.02)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--stall-every", type=int, default=None)
    p.add_argument("--stall-s", type=float, default=0.0)
    p.add_argument("--burst", type=int, default=1)
    p.add_argument("--knee-qps", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emission-log", default=None)
    p.set_defaults(func=_cmd_mock_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fluidbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, trace.ParseError, trace.ValidationError) as exc:
        print(f"fluidbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except prefill.ProfilingError as exc:
        print(f"fluidbench: endpoint failure: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except solver.CapacitySearchError as exc:
        print(f"fluidbench: probe failure: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except OSError as exc:
        print(f"fluidbench: endpoint failure: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT


if __name__ == "__main__":
    sys.exit(main())
