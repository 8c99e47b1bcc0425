"""Machine-readable reports and plot-ready CDF tables for a recorded run.

A report is derived purely from (run file, deadline config, SLO, sweep grid):
re-analyzing the same inputs reproduces it byte for byte. Outputs are a JSON
summary plus flat CSV tables (one per distribution) that any plotting tool
can consume: pooled decode-gap CDF, TTFT CDF, per-request deadline-miss-rate
CDF, TTFT against prompt length, and the satisfied-fraction sweep across
decode deadlines.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .metrics import (
    DeadlineConfig,
    cdf_points,
    fluidity_of_trace,
    normalized_latency,
    percentile,
    scheduling_delay_estimate,
    tpot,
    ttft,
)
from .solver import SloSpec, fluid_rate, fluidity_sweep, slo_satisfied_fraction
from .trace import RunRecord, STATUS_COMPLETED, inter_token_times

PER_REQUEST_COLUMNS = [
    "request_id",
    "prompt_tokens",
    "ttft_s",
    "tpot_s",
    "norm_latency_s",
    "sched_delay_est_s",
    "fluidity_index",
    "miss_rate",
]

REPORT_FILES = {
    "summary": "summary.json",
    "per_request": "per_request.csv",
    "cdf_tbt": "cdf_tbt.csv",
    "cdf_ttft": "cdf_ttft.csv",
    "cdf_miss_rate": "cdf_miss_rate.csv",
    "ttft_vs_prompt": "ttft_vs_prompt.csv",
    "fluidity_sweep": "fluidity_sweep.csv",
}


def _stats(values: Sequence[float]) -> dict | None:
    if not values:
        return None
    return {
        "mean": sum(values) / len(values),
        "median": percentile(values, 50),
        "p99": percentile(values, 99),
    }


@dataclass
class ReportBundle:
    """Everything the report emitter writes, already computed."""

    run_meta: dict
    request_counts: dict
    ttft_stats: dict | None
    tbt_stats: dict | None
    tpot_stats: dict | None
    rates: dict
    fluid: dict
    slo: dict
    deadline: dict
    slo_satisfied_fraction: float
    per_request_rows: list[dict]
    cdf_tbt: list[tuple[float, float]]
    cdf_ttft: list[tuple[float, float]]
    cdf_miss_rate: list[tuple[float, float]]
    ttft_vs_prompt: list[tuple[int, float]]
    sweep: list[tuple[float, float]]

    def summary_obj(self) -> dict:
        return {
            "run": self.run_meta,
            "requests": self.request_counts,
            "ttft_s": self.ttft_stats,
            "tbt_s": self.tbt_stats,
            "tpot_s": self.tpot_stats,
            "rates": self.rates,
            "fluid": self.fluid,
            "slo": self.slo,
            "deadline": self.deadline,
            "slo_satisfied_fraction": self.slo_satisfied_fraction,
        }


def build_report(
    run: RunRecord,
    config: DeadlineConfig,
    slo: SloSpec,
    sweep_deadlines: Sequence[float],
    rate_resolution: float = 0.001,
) -> ReportBundle:
    """Compute all report content for a recorded run."""
    completed = [t for t in run.traces if t.status == STATUS_COMPLETED and t.events]
    counts = {
        "total": len(run.traces),
        "completed": len(completed),
        "errored": sum(1 for t in run.traces if t.status == "errored"),
        "timed_out": sum(1 for t in run.traces if t.status == "timed_out"),
    }

    ttfts: list[float] = []
    pooled_tbt: list[float] = []
    tpots: list[float] = []
    rows: list[dict] = []
    miss_rates: list[float] = []
    ttft_prompt: list[tuple[int, float]] = []

    for trace in run.traces:
        row: dict = {
            "request_id": trace.request_id,
            "prompt_tokens": trace.prompt_token_count,
            "ttft_s": None,
            "tpot_s": None,
            "norm_latency_s": None,
            "sched_delay_est_s": None,
            "fluidity_index": 0.0,
            "miss_rate": 1.0,
        }
        if trace.status == STATUS_COMPLETED and trace.events:
            t_first = ttft(trace)
            row["ttft_s"] = t_first
            row["tpot_s"] = tpot(trace)
            row["norm_latency_s"] = normalized_latency(trace)
            if config.prefill_curve is not None:
                row["sched_delay_est_s"] = scheduling_delay_estimate(
                    trace, config.prefill_curve
                )
            fluidity = fluidity_of_trace(trace, config)
            row["fluidity_index"] = fluidity.index
            row["miss_rate"] = fluidity.miss_rate
            ttfts.append(t_first)
            pooled_tbt.extend(inter_token_times(trace)[1:])
            if row["tpot_s"] is not None:
                tpots.append(row["tpot_s"])
            ttft_prompt.append((trace.prompt_token_count, t_first))
        miss_rates.append(row["miss_rate"])
        rows.append(row)

    ttft_stats = _stats(ttfts)
    tbt_stats = _stats(pooled_tbt)
    tpot_stats = _stats(tpots)
    rate = fluid_rate(run, config, slo, resolution=rate_resolution)

    rates = {
        "tpot_rate_tokens_per_s": (
            1.0 / tpot_stats["mean"] if tpot_stats and tpot_stats["mean"] > 0 else None
        ),
        "tail_tbt_rate_tokens_per_s": (
            1.0 / tbt_stats["p99"] if tbt_stats and tbt_stats["p99"] > 0 else None
        ),
        "fluid_rate_tokens_per_s": rate.tokens_per_s,
    }
    fluid = {
        "tokens_per_s": rate.tokens_per_s,
        "min_feasible_deadline_s": rate.deadline_s,
        "saturated": rate.saturated,
        "resolution_s": rate_resolution,
    }
    deadline = {
        "decode_deadline_s": config.decode_deadline,
        "scheduling_slack_s": config.scheduling_slack,
        "prefill_source": "curve" if config.prefill_curve is not None else "fixed",
        "prefill_override_s": config.prefill_override,
        "prefill_curve": (
            config.prefill_curve.to_obj() if config.prefill_curve is not None else None
        ),
    }
    slo_obj = {
        "fluidity_threshold": slo.fluidity_threshold,
        "request_fraction": slo.request_fraction,
    }

    return ReportBundle(
        run_meta={
            "endpoint": run.metadata.endpoint,
            "model": run.metadata.model,
            "workload_seed": run.metadata.workload_seed,
            "target_qps": run.metadata.target_qps,
            "started_at": run.metadata.started_at,
            "harness_version": run.metadata.harness_version,
        },
        request_counts=counts,
        ttft_stats=ttft_stats,
        tbt_stats=tbt_stats,
        tpot_stats=tpot_stats,
        rates=rates,
        fluid=fluid,
        slo=slo_obj,
        deadline=deadline,
        slo_satisfied_fraction=slo_satisfied_fraction(run, config, slo),
        per_request_rows=rows,
        cdf_tbt=cdf_points(pooled_tbt) if pooled_tbt else [],
        cdf_ttft=cdf_points(ttfts) if ttfts else [],
        cdf_miss_rate=cdf_points(miss_rates) if miss_rates else [],
        ttft_vs_prompt=sorted(ttft_prompt),
        sweep=fluidity_sweep(run, config, slo, sweep_deadlines),
    )


# ---------------------------------------------------------------------------
# Writers (byte-deterministic: repr floats, LF newlines, sorted JSON keys)
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_report(bundle: ReportBundle, directory: str | Path) -> dict[str, Path]:
    """Write all report files into ``directory``; returns name -> path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / fname for name, fname in REPORT_FILES.items()}

    with open(paths["summary"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(bundle.summary_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    _write_csv(
        paths["per_request"],
        PER_REQUEST_COLUMNS,
        [[row[col] for col in PER_REQUEST_COLUMNS] for row in bundle.per_request_rows],
    )
    _write_csv(paths["cdf_tbt"], ["tbt_s", "cum_fraction"], bundle.cdf_tbt)
    _write_csv(paths["cdf_ttft"], ["ttft_s", "cum_fraction"], bundle.cdf_ttft)
    _write_csv(paths["cdf_miss_rate"], ["miss_rate", "cum_fraction"],
               bundle.cdf_miss_rate)
    _write_csv(paths["ttft_vs_prompt"], ["prompt_tokens", "ttft_s"],
               bundle.ttft_vs_prompt)
    _write_csv(paths["fluidity_sweep"], ["decode_deadline_s", "satisfied_fraction"],
               bundle.sweep)
    return paths
