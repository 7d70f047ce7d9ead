"""Run metrics and the delimited report formats.

The step log is a CSV with a leading version line:

    # step-log v1
    step_index,target_batch,drafted,accepted,bonus,draft_ms,verify_ms,step_ms,fallback

and metrics.txt is flat "key = value" lines under "# metrics v1".  Duration
columns carry whatever unit the latency models were configured in; the _ms
names are just the conventional column labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .errors import ProtocolError
from .request_model import TERMINAL_STATES, Request, RequestState, StepRecord


class KvUsageSample(Protocol):
    """Anything carrying a per-step block-occupancy reading."""

    blocks_in_use: int

__all__ = [
    "MetricsReport",
    "percentile_nearest_rank",
    "compute_metrics",
    "render_step_log",
    "render_metrics",
    "write_step_log",
    "write_metrics",
]

STEP_LOG_VERSION = "# step-log v1"
METRICS_VERSION = "# metrics v1"
STEP_LOG_HEADER = (
    "step_index,target_batch,drafted,accepted,bonus,draft_ms,verify_ms,step_ms,fallback"
)


@dataclass(frozen=True)
class MetricsReport:
    throughput: float
    e2el_mean: float
    e2el_p50: float
    e2el_p99: float
    vsr: float
    makespan: float
    total_steps: int
    fallback_steps: int
    num_requests: int
    finished: int
    preempted: int
    total_drafted: int
    total_accepted: int
    total_bonus: int
    total_generated: int
    prompt_tokens: int
    kv_peak_blocks: int | None = None


def percentile_nearest_rank(values: list[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    if not values:
        raise ValueError("percentile of an empty list")
    if not (0.0 < pct <= 100.0):
        raise ValueError(f"pct must lie in (0, 100], got {pct}")
    ordered = sorted(values)
    rank = math.ceil(pct / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


def compute_metrics(
    step_log: list[StepRecord],
    requests: list[Request],
    kv_log: Sequence[KvUsageSample] | None = None,
) -> MetricsReport:
    """Aggregate a completed run; every request must be in a terminal state."""
    live = [r.id for r in requests if r.state not in TERMINAL_STATES]
    if live:
        raise ProtocolError(f"metrics need a completed run; live requests: {live}")

    finished = [r for r in requests if r.state is RequestState.FINISHED]
    preempted = sum(1 for r in requests if r.state is RequestState.PREEMPTED)
    makespan = max((r.finish_time for r in finished), default=0.0)

    total_drafted = sum(rec.drafted_tokens for rec in step_log)
    total_accepted = sum(rec.accepted_tokens for rec in step_log)
    total_bonus = sum(rec.bonus_tokens for rec in step_log)
    total_generated = sum(r.generated for r in requests)
    prompt_tokens = sum(
        r.prompt_len for r in requests if r.state is not RequestState.ABORTED
    )

    latencies = [r.finish_time - r.arrival_time for r in finished]
    if latencies:
        e2el_mean = sum(latencies) / len(latencies)
        e2el_p50 = percentile_nearest_rank(latencies, 50.0)
        e2el_p99 = percentile_nearest_rank(latencies, 99.0)
    else:
        e2el_mean = e2el_p50 = e2el_p99 = 0.0

    return MetricsReport(
        throughput=(total_accepted + total_bonus) / makespan if makespan > 0.0 else 0.0,
        e2el_mean=e2el_mean,
        e2el_p50=e2el_p50,
        e2el_p99=e2el_p99,
        vsr=total_accepted / total_drafted if total_drafted > 0 else 0.0,
        makespan=makespan,
        total_steps=len(step_log),
        fallback_steps=sum(1 for rec in step_log if rec.fallback),
        num_requests=len(requests),
        finished=len(finished),
        preempted=preempted,
        total_drafted=total_drafted,
        total_accepted=total_accepted,
        total_bonus=total_bonus,
        total_generated=total_generated,
        prompt_tokens=prompt_tokens,
        kv_peak_blocks=(
            max((rec.blocks_in_use for rec in kv_log), default=0)
            if kv_log is not None
            else None
        ),
    )


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def render_step_log(records: list[StepRecord]) -> str:
    lines = [STEP_LOG_VERSION, STEP_LOG_HEADER]
    for rec in records:
        target = "" if rec.target_batch is None else str(rec.target_batch)
        lines.append(
            ",".join(
                [
                    str(rec.step_index),
                    target,
                    str(rec.drafted_tokens),
                    str(rec.accepted_tokens),
                    str(rec.bonus_tokens),
                    _fmt(rec.draft_duration),
                    _fmt(rec.verify_duration),
                    _fmt(rec.step_duration),
                    "1" if rec.fallback else "0",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def render_metrics(report: MetricsReport) -> str:
    pairs: list[tuple[str, str]] = [
        ("throughput", _fmt(report.throughput)),
        ("e2el_mean", _fmt(report.e2el_mean)),
        ("e2el_p50", _fmt(report.e2el_p50)),
        ("e2el_p99", _fmt(report.e2el_p99)),
        ("vsr", _fmt(report.vsr)),
        ("makespan", _fmt(report.makespan)),
        ("total_steps", str(report.total_steps)),
        ("fallback_steps", str(report.fallback_steps)),
        ("num_requests", str(report.num_requests)),
        ("finished", str(report.finished)),
        ("preempted", str(report.preempted)),
        ("total_drafted", str(report.total_drafted)),
        ("total_accepted", str(report.total_accepted)),
        ("total_bonus", str(report.total_bonus)),
        ("total_generated", str(report.total_generated)),
        ("prompt_tokens", str(report.prompt_tokens)),
    ]
    if report.kv_peak_blocks is not None:
        pairs.append(("kv_peak_blocks", str(report.kv_peak_blocks)))
    lines = [METRICS_VERSION] + [f"{key} = {value}" for key, value in pairs]
    return "\n".join(lines) + "\n"


def write_step_log(records: list[StepRecord], path: str | Path) -> None:
    Path(path).write_text(render_step_log(records), encoding="utf-8")


def write_metrics(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(render_metrics(report), encoding="utf-8")
