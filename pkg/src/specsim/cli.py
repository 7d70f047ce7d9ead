"""Command-line interface.

Subcommands:

  simulate       run one configuration; writes step_log.csv, metrics.txt, and
                 resolved_config.txt into --out
  sweep          cross-product of --grid axes; writes sweep.csv into --out
  analyze        closed-form latency numbers for theory.* inputs
  verify-theory  check the closed-form results over a grid and report
                 violations

Exit codes: 0 success, 2 invalid configuration or workload, 3 runtime
protocol/accounting/numeric failure, 4 theory check failed.  SPECSIM_SEED in
the environment overrides engine.seed from every other source.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analytic import FrontierParams, psd_time, sd_optimal, sd_time_brute
from .config import (
    DEFAULTS,
    build_sim_config,
    build_theory,
    build_workload_spec,
    render_resolved,
    resolve,
)
from .engine import run
from .errors import ConfigError, KVError, NumericError, ProtocolError, WorkloadError
from .metrics import MetricsReport, render_metrics, render_step_log
from .workload import generate_requests

RATIO_BOUND = 1.59
RATIO_REGION_MIN = 1.68
BRUTE_TOL = 1e-4

SWEEP_METRIC_COLUMNS = tuple(f.name for f in dataclasses.fields(MetricsReport))


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _resolve_from_args(args: argparse.Namespace) -> dict[str, str]:
    return resolve(
        config_path=args.config,
        overrides=args.set or [],
        seed_env=os.environ.get("SPECSIM_SEED"),
    )


def _simulate_once(cfg: dict[str, str]):
    sim_cfg = build_sim_config(cfg)
    wl_spec = build_workload_spec(cfg)
    requests = generate_requests(wl_spec, sim_cfg.seed)
    return run(sim_cfg, requests, list(wl_spec.preemptions))


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    state, report = _simulate_once(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "step_log.csv").write_text(
        render_step_log(state.step_log), encoding="utf-8"
    )
    (outdir / "metrics.txt").write_text(render_metrics(report), encoding="utf-8")
    (outdir / "resolved_config.txt").write_text(render_resolved(cfg), encoding="utf-8")
    print(
        f"simulate: {report.finished}/{report.num_requests} finished in "
        f"{report.total_steps} steps ({report.fallback_steps} fallback), "
        f"makespan {_fmt(report.makespan)}, throughput {_fmt(report.throughput)}, "
        f"vsr {_fmt(report.vsr)}"
    )
    print(f"simulate: wrote {outdir / 'step_log.csv'}")
    return 0


def _metric_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return _fmt(value)
    return str(value)


def _sweep_worker(cfg: dict[str, str]) -> dict[str, str]:
    try:
        _, report = _simulate_once(cfg)
    except (ConfigError, WorkloadError, ProtocolError, KVError, NumericError) as exc:
        return {"error": str(exc).replace(",", ";").replace("\n", " ")}
    row = {name: _metric_cell(getattr(report, name)) for name in SWEEP_METRIC_COLUMNS}
    row["error"] = ""
    return row


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _resolve_from_args(args)
    if not args.grid:
        raise ConfigError("empty sweep: at least one --grid axis is required")
    axes: list[tuple[str, list[str]]] = []
    for item in args.grid:
        if "=" not in item:
            raise ConfigError(f"--grid {item!r}: expected KEY=V1,V2,...")
        key, values_text = item.split("=", 1)
        key = key.strip()
        values = [v.strip() for v in values_text.split(",") if v.strip() != ""]
        if not values:
            raise ConfigError(f"--grid {item!r}: no values given")
        if key not in DEFAULTS:
            raise ConfigError(f"--grid: unknown config key {key!r}")
        axes.append((key, values))
    keys = [key for key, _ in axes]
    combos = list(itertools.product(*(values for _, values in axes)))

    cfgs = []
    for combo in combos:
        cfg = dict(base)
        cfg.update(dict(zip(keys, combo)))
        cfgs.append(cfg)

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, cfgs))
    else:
        results = [_sweep_worker(cfg) for cfg in cfgs]

    header = keys + list(SWEEP_METRIC_COLUMNS) + ["error"]
    lines = ["# sweep v1", ",".join(header)]
    failed = 0
    for combo, result in zip(combos, results):
        if result.get("error"):
            failed += 1
            cells = list(combo) + ["" for _ in SWEEP_METRIC_COLUMNS] + [result["error"]]
        else:
            cells = list(combo) + [result[c] for c in SWEEP_METRIC_COLUMNS] + [""]
        lines.append(",".join(cells))

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"sweep: {len(combos)} points, {failed} failed, wrote {outdir / 'sweep.csv'}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    theory = build_theory(cfg)
    params = FrontierParams(
        alpha=theory["alpha"],
        verify_time=theory["verify_time"],
        total_tokens=theory["total_tokens"],
    )
    opt = sd_optimal(params)
    psd = psd_time(params)
    brute = sd_time_brute(params, theory["grid_points"])
    av = params.alpha * params.verify_time
    bracket_lo = math.log(av + 1.0) / params.alpha
    bracket_hi = math.log(2.0 * (av + 1.0)) / params.alpha
    pairs = [
        ("alpha", _fmt(params.alpha)),
        ("verify_time", _fmt(params.verify_time)),
        ("total_tokens", _fmt(params.total_tokens)),
        ("t_star", _fmt(opt.t_star)),
        ("t_star_bracket_lo", _fmt(bracket_lo)),
        ("t_star_bracket_hi", _fmt(bracket_hi)),
        ("t_sd", _fmt(opt.t_sd)),
        ("t_sd_lower_bound", _fmt(opt.lower_bound)),
        ("t_sd_brute", _fmt(brute)),
        ("brute_rel_diff", _fmt(abs(opt.t_sd - brute) / opt.t_sd)),
        ("t_psd", _fmt(psd.t_psd)),
        ("sd_psd_ratio", _fmt(opt.t_sd / psd.t_psd)),
    ]
    text = "\n".join(["# analysis v1"] + [f"{k} = {v}" for k, v in pairs]) + "\n"
    sys.stdout.write(text)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "analysis.txt").write_text(text, encoding="utf-8")
    return 0


def cmd_verify_theory(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    theory = build_theory(cfg)
    rows: list[list[str]] = []
    bad = 0
    total = 0
    for alpha in theory["alphas"]:
        for av in theory["alpha_v"]:
            total += 1
            verify_time = av / alpha
            detail: list[str] = []
            status = "ok"
            t_star = t_sd = t_psd = ratio = brute = float("nan")
            try:
                params = FrontierParams(
                    alpha=alpha, verify_time=verify_time, total_tokens=1.0
                )
                opt = sd_optimal(params)
                psd = psd_time(params)
                brute = sd_time_brute(params, theory["grid_points"])
                t_star, t_sd, t_psd = opt.t_star, opt.t_sd, psd.t_psd
                ratio = t_sd / t_psd
                rel = abs(t_sd - brute) / t_sd
                lo = math.log(av + 1.0) / alpha
                hi = math.log(2.0 * (av + 1.0)) / alpha
                if not (lo < t_star < hi):
                    status = "fail"
                    detail.append(f"t_star {t_star:.6g} outside ({lo:.6g}, {hi:.6g})")
                if rel > BRUTE_TOL:
                    status = "fail"
                    detail.append(f"brute disagreement {rel:.3g} > {BRUTE_TOL:g}")
                if t_sd < opt.lower_bound:
                    status = "fail"
                    detail.append("t_sd below its analytic lower bound")
                if av >= RATIO_REGION_MIN - 1e-12 and not (ratio > RATIO_BOUND):
                    status = "fail"
                    detail.append(f"ratio {ratio:.6f} <= {RATIO_BOUND}")
            except (NumericError, ValueError) as exc:
                status = "error"
                detail.append(str(exc))
            if status != "ok":
                bad += 1
            rows.append(
                [
                    _fmt(alpha),
                    _fmt(av),
                    _fmt(verify_time),
                    _fmt(t_star),
                    _fmt(t_sd),
                    _fmt(t_psd),
                    _fmt(ratio),
                    _fmt(brute),
                    status,
                    "; ".join(detail).replace(",", ";"),
                ]
            )
            print(
                f"alpha={alpha:g} alpha_v={av:g} ratio={ratio:.6f} "
                f"{status}{(': ' + '; '.join(detail)) if detail else ''}"
            )

    header = (
        "alpha,alpha_v,verify_time,t_star,t_sd,t_psd,sd_psd_ratio,t_sd_brute,"
        "status,detail"
    )
    text = "\n".join(["# theory v1", header] + [",".join(r) for r in rows]) + "\n"
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "theory.csv").write_text(text, encoding="utf-8")
    print(f"verify-theory: {bad} of {total} points failed")
    return 4 if bad else 0


def _add_common(sp: argparse.ArgumentParser, with_out: bool, out_required: bool) -> None:
    sp.add_argument("--config", metavar="PATH", default=None, help="config file")
    sp.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="override one config key (repeatable)",
    )
    if with_out:
        sp.add_argument(
            "--out",
            metavar="DIR",
            required=out_required,
            default=None,
            help="output directory",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specsim",
        description=(
            "Discrete-event simulator and latency calculator for batch-parallel "
            "speculative decoding"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run one configuration")
    _add_common(sp, with_out=True, out_required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run a grid of configurations")
    _add_common(sp, with_out=True, out_required=True)
    sp.add_argument(
        "--grid",
        metavar="KEY=V1,V2,...",
        action="append",
        default=[],
        help="one sweep axis (repeatable; axes cross-multiply in order)",
    )
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("analyze", help="closed-form latency numbers")
    _add_common(sp, with_out=True, out_required=False)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("verify-theory", help="check the closed forms over a grid")
    _add_common(sp, with_out=True, out_required=False)
    sp.set_defaults(func=cmd_verify_theory)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, WorkloadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ProtocolError, KVError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
