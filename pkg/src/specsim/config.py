"""Flat key = value configuration: parsing, overrides, and resolution.

Config files hold one dotted key per line ("engine.m = 16"); '#' starts a
comment and blank lines are skipped.  Every key has a default, unknown keys are
rejected, and the fully resolved mapping can be rendered back out in a form
that parses to the identical run (that rendering is what simulate writes as
resolved_config.txt).
"""

from __future__ import annotations

from pathlib import Path

from .acceptance_model import AcceptanceModel
from .errors import ConfigError
from .request_model import LatencyModel, SimConfig, validate_config
from .workload import LengthSpec, WorkloadSpec, parse_preemptions

__all__ = [
    "DEFAULTS",
    "parse_config_text",
    "load_config_file",
    "apply_overrides",
    "resolve",
    "build",
    "render_resolved",
]

CONFIG_VERSION = "# config v1"

DEFAULTS: dict[str, str] = {
    "engine.mode": "psd",
    "engine.m": "4",
    "engine.k": "3",
    "engine.capacity": "",
    "engine.comm_overhead": "0.0",
    "engine.seed": "1234",
    "engine.assign_policy": "skip-batch",
    "engine.sd_batch_factor": "1",
    "engine.k_per_request": "",
    "draft.kind": "constant",
    "draft.base": "1.0",
    "draft.per_token": "0.0",
    "draft.per_request": "0.0",
    "verify.kind": "constant",
    "verify.base": "1.0",
    "verify.per_token": "0.0",
    "verify.per_request": "0.0",
    "acceptance.kind": "bernoulli-chain",
    "acceptance.p": "0.8",
    "acceptance.alpha": "1.0",
    "kv.block_size": "16",
    "kv.policy": "deferred",
    "workload.arrival": "all-at-once",
    "workload.rate": "0.0",
    "workload.count": "",
    "workload.prompt_len": "32",
    "workload.output_len": "128",
    "workload.trace": "",
    "workload.preemptions": "",
    "theory.alpha": "1.0",
    "theory.verify_time": "1.0",
    "theory.total_tokens": "1.0",
    "theory.alphas": "0.25,0.5,1,2,4",
    "theory.alpha_v": "1.68,2,3,5,10",
    "theory.grid_points": "100000",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse key = value lines; later lines win over earlier ones."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected KEY = VALUE, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def load_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def apply_overrides(cfg: dict[str, str], overrides: list[str]) -> dict[str, str]:
    """Apply --set style KEY=VALUE strings on top of cfg."""
    out = dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected KEY=VALUE")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"override: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def resolve(
    config_path: str | Path | None,
    overrides: list[str] | None = None,
    seed_env: str | None = None,
) -> dict[str, str]:
    """Layer defaults, an optional file, --set overrides, and the seed
    environment override into one complete mapping."""
    cfg = dict(DEFAULTS)
    if config_path is not None:
        cfg.update(load_config_file(config_path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if seed_env is not None and seed_env != "":
        try:
            int(seed_env)
        except ValueError as exc:
            raise ConfigError(f"SPECSIM_SEED must be an integer, got {seed_env!r}") from exc
        cfg["engine.seed"] = seed_env.strip()
    return cfg


def _get_int(cfg: dict[str, str], key: str) -> int:
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}") from exc


def _get_float(cfg: dict[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from exc


def _get_float_list(cfg: dict[str, str], key: str) -> list[float]:
    text = cfg[key].strip()
    if not text:
        raise ConfigError(f"{key}: expected a comma-separated list")
    try:
        return [float(part) for part in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{key}: bad number in {cfg[key]!r}") from exc


def _latency(cfg: dict[str, str], section: str) -> LatencyModel:
    return LatencyModel(
        kind=cfg[f"{section}.kind"],
        base=_get_float(cfg, f"{section}.base"),
        per_token=_get_float(cfg, f"{section}.per_token"),
        per_request=_get_float(cfg, f"{section}.per_request"),
    )


def build_sim_config(cfg: dict[str, str]) -> SimConfig:
    k_text = cfg["engine.k_per_request"].strip()
    if k_text:
        try:
            k_overrides = tuple(int(part) for part in k_text.split(","))
        except ValueError as exc:
            raise ConfigError(
                f"engine.k_per_request: bad integer in {k_text!r}"
            ) from exc
    else:
        k_overrides = ()
    capacity_text = cfg["engine.capacity"].strip()
    capacity = int(capacity_text) if capacity_text else None
    try:
        acceptance = AcceptanceModel(
            kind=cfg["acceptance.kind"],
            p=_get_float(cfg, "acceptance.p"),
            alpha=_get_float(cfg, "acceptance.alpha"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sim = SimConfig(
        mode=cfg["engine.mode"],
        m=_get_int(cfg, "engine.m"),
        k=_get_int(cfg, "engine.k"),
        capacity=capacity,
        draft_latency=_latency(cfg, "draft"),
        verify_latency=_latency(cfg, "verify"),
        comm_overhead=_get_float(cfg, "engine.comm_overhead"),
        acceptance=acceptance,
        block_size=_get_int(cfg, "kv.block_size"),
        seed=_get_int(cfg, "engine.seed"),
        assign_policy=cfg["engine.assign_policy"],
        kv_policy=cfg["kv.policy"],
        sd_batch_factor=_get_int(cfg, "engine.sd_batch_factor"),
        k_overrides=k_overrides,
    )
    return validate_config(sim)


def build_workload_spec(cfg: dict[str, str]) -> WorkloadSpec:
    count_text = cfg["workload.count"].strip()
    trace_text = cfg["workload.trace"].strip()
    return WorkloadSpec(
        arrival=cfg["workload.arrival"],
        rate=_get_float(cfg, "workload.rate"),
        count=int(count_text) if count_text else None,
        prompt_len=LengthSpec.parse(cfg["workload.prompt_len"], "workload.prompt_len", 0),
        output_len=LengthSpec.parse(cfg["workload.output_len"], "workload.output_len", 1),
        trace_path=trace_text or None,
        preemptions=parse_preemptions(cfg["workload.preemptions"]),
    )


def build_theory(cfg: dict[str, str]) -> dict[str, object]:
    grid_points = _get_int(cfg, "theory.grid_points")
    return {
        "alpha": _get_float(cfg, "theory.alpha"),
        "verify_time": _get_float(cfg, "theory.verify_time"),
        "total_tokens": _get_float(cfg, "theory.total_tokens"),
        "alphas": _get_float_list(cfg, "theory.alphas"),
        "alpha_v": _get_float_list(cfg, "theory.alpha_v"),
        "grid_points": grid_points,
    }


def build(cfg: dict[str, str]) -> tuple[SimConfig, WorkloadSpec]:
    return build_sim_config(cfg), build_workload_spec(cfg)


def render_resolved(cfg: dict[str, str]) -> str:
    lines = [CONFIG_VERSION]
    for key in sorted(cfg):
        lines.append(f"{key} = {cfg[key]}")
    return "\n".join(lines) + "\n"
