"""Core data model: requests, latency models, engine configuration, step records."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .acceptance_model import AcceptanceModel
from .errors import ConfigError

__all__ = [
    "RequestState",
    "Request",
    "LatencyModel",
    "SimConfig",
    "StepRecord",
    "validate_config",
]

ENGINE_MODES = ("psd", "standard-sd", "psd-fallback-disabled")
ASSIGN_POLICIES = ("skip-batch", "always-balance")
KV_POLICIES = ("deferred", "eager")
LATENCY_KINDS = ("constant", "affine")


class RequestState(enum.Enum):
    """Lifecycle of a request.

    Legal transitions: waiting -> prefill -> decoding, then decoding ->
    finished, preempted, or aborted.  Terminal states have no exits.
    """

    WAITING = "waiting"
    PREFILL = "prefill"
    DECODING = "decoding"
    FINISHED = "finished"
    PREEMPTED = "preempted"
    ABORTED = "aborted"


_ALLOWED_TRANSITIONS = {
    RequestState.WAITING: {RequestState.PREFILL},
    RequestState.PREFILL: {RequestState.DECODING},
    RequestState.DECODING: {
        RequestState.FINISHED,
        RequestState.PREEMPTED,
        RequestState.ABORTED,
    },
    RequestState.FINISHED: set(),
    RequestState.PREEMPTED: set(),
    RequestState.ABORTED: set(),
}

TERMINAL_STATES = frozenset(
    {RequestState.FINISHED, RequestState.PREEMPTED, RequestState.ABORTED}
)


@dataclass
class Request:
    id: int
    arrival_time: float
    prompt_len: int
    target_output_len: int
    generated: int = 0
    batch_id: int | None = None
    state: RequestState = RequestState.WAITING
    finish_time: float | None = None

    def __post_init__(self) -> None:
        if self.prompt_len < 0:
            raise ConfigError(f"request {self.id}: prompt_len must be nonnegative")
        if self.target_output_len <= 0:
            raise ConfigError(f"request {self.id}: target_output_len must be positive")
        if self.arrival_time < 0.0:
            raise ConfigError(f"request {self.id}: arrival_time must be nonnegative")

    def transition(self, new_state: RequestState) -> None:
        """Move to new_state, enforcing the lifecycle graph."""
        if new_state not in _ALLOWED_TRANSITIONS[self.state]:
            raise ValueError(
                f"request {self.id}: illegal transition "
                f"{self.state.value} -> {new_state.value}"
            )
        self.state = new_state

    @property
    def remaining(self) -> int:
        return self.target_output_len - self.generated


@dataclass(frozen=True)
class LatencyModel:
    """Duration of one batched model pass.

    "constant" charges base for any nonempty batch; "affine" charges
    base + per_token * tokens + per_request * requests.  An empty batch always
    costs 0 regardless of kind.
    """

    kind: str
    base: float
    per_token: float = 0.0
    per_request: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in LATENCY_KINDS:
            raise ConfigError(f"unknown latency kind {self.kind!r}")
        if self.base < 0.0 or self.per_token < 0.0 or self.per_request < 0.0:
            raise ConfigError("latency coefficients must be nonnegative")

    def duration(self, tokens: int, requests: int) -> float:
        if requests == 0:
            return 0.0
        if self.kind == "constant":
            return self.base
        return self.base + self.per_token * tokens + self.per_request * requests


@dataclass(frozen=True)
class SimConfig:
    mode: str = "psd"
    m: int = 4
    k: int = 3
    capacity: int | None = None
    draft_latency: LatencyModel = LatencyModel("constant", 1.0)
    verify_latency: LatencyModel = LatencyModel("constant", 1.0)
    comm_overhead: float = 0.0
    acceptance: AcceptanceModel = AcceptanceModel("bernoulli-chain", p=0.8)
    block_size: int = 16
    seed: int = 0
    assign_policy: str = "skip-batch"
    kv_policy: str = "deferred"
    sd_batch_factor: int = 1
    k_overrides: tuple[int, ...] = field(default=())

    def draft_len(self, request_id: int) -> int:
        """Drafted tokens per step for a request; overrides are positional."""
        if self.k_overrides and request_id < len(self.k_overrides):
            return self.k_overrides[request_id]
        return self.k

    @property
    def effective_capacity(self) -> int:
        return self.m * self.k if self.capacity is None else self.capacity


def validate_config(config: SimConfig) -> SimConfig:
    """Check invariants and return the config; raise ConfigError naming the
    first violation."""
    if config.mode not in ENGINE_MODES:
        raise ConfigError(f"unknown engine mode {config.mode!r}")
    if config.m <= 0:
        raise ConfigError(f"batch size m must be positive, got {config.m}")
    if config.k <= 0:
        raise ConfigError(f"draft length k must be positive, got {config.k}")
    if any(kk <= 0 for kk in config.k_overrides):
        raise ConfigError("per-request draft lengths must all be positive")
    if not config.k_overrides and config.effective_capacity != config.m * config.k:
        raise ConfigError(
            f"capacity mismatch: expected m*k = {config.m * config.k}, "
            f"got {config.effective_capacity}"
        )
    if config.effective_capacity <= 0:
        raise ConfigError("verifier capacity must be positive")
    if config.comm_overhead < 0.0:
        raise ConfigError(
            f"comm_overhead must be nonnegative, got {config.comm_overhead}"
        )
    if config.block_size <= 0:
        raise ConfigError(
            f"block size must be positive, got {config.block_size}"
        )
    if config.assign_policy not in ASSIGN_POLICIES:
        raise ConfigError(f"unknown assign policy {config.assign_policy!r}")
    if config.kv_policy not in KV_POLICIES:
        raise ConfigError(f"unknown kv policy {config.kv_policy!r}")
    if config.sd_batch_factor <= 0:
        raise ConfigError(
            f"sd_batch_factor must be positive, got {config.sd_batch_factor}"
        )
    return config


@dataclass(frozen=True)
class StepRecord:
    """One simulated engine step, as it lands in the step log."""

    step_index: int
    target_batch: int | None
    draft_batch: int | None
    drafted_tokens: int
    accepted_tokens: int
    bonus_tokens: int
    draft_duration: float
    verify_duration: float
    prefill_duration: float
    step_duration: float
    fallback: bool
