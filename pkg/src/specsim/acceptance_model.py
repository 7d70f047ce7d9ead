"""Acceptance of drafted tokens during verification.

A verification pass looks at up to k drafted tokens in order.  Token j is
accepted only if tokens 1..j-1 were accepted and its own coin flip succeeds, so
the accepted count is the length of the leading run of successes.  The per-token
probability is either a fixed p ("bernoulli-chain"), tied to drafting time
through the frontier 1 - exp(-alpha * t) ("frontier-coupled"), or 1
("deterministic-accept-all", which never touches the RNG).

Randomness is organised as one stream per (seed, request, verification index),
derived with splitmix64-style integer mixing.  That keeps outcomes identical
across platforms and makes a request's acceptance trajectory independent of how
the scheduler interleaves requests, which the engine relies on when it sizes
block allocations ahead of the commit.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

__all__ = [
    "AcceptanceModel",
    "acceptance_stream",
    "accepted_count",
    "expected_accepted",
]

ACCEPTANCE_KINDS = ("bernoulli-chain", "frontier-coupled", "deterministic-accept-all")

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_stream_key(seed: int, *parts: int) -> int:
    """Mix a seed and integer labels into one well-scrambled 64-bit key."""
    h = _splitmix64(seed & _MASK64)
    for part in parts:
        h = _splitmix64(h ^ (part & _MASK64))
    return h


def acceptance_stream(seed: int, request_id: int, verify_index: int) -> random.Random:
    """RNG for one request's n-th verification, independent of schedule order."""
    return random.Random(mix_stream_key(seed, request_id, verify_index))


@dataclass(frozen=True)
class AcceptanceModel:
    """Per-token acceptance law; p is used by bernoulli-chain, alpha by
    frontier-coupled."""

    kind: str
    p: float = 1.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ACCEPTANCE_KINDS:
            raise ValueError(f"unknown acceptance kind {self.kind!r}")
        if self.kind == "bernoulli-chain" and not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.kind == "frontier-coupled" and not (self.alpha > 0.0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def token_probability(self, draft_time: float = 0.0) -> float:
        if self.kind == "bernoulli-chain":
            return self.p
        if self.kind == "frontier-coupled":
            if draft_time < 0.0:
                raise ValueError(f"draft_time must be nonnegative, got {draft_time}")
            return -math.expm1(-self.alpha * draft_time)
        return 1.0


def accepted_count(
    model: AcceptanceModel, k: int, draft_time: float, rng: random.Random
) -> int:
    """Length of the leading accepted run among k drafted tokens."""
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if model.kind == "deterministic-accept-all":
        return k
    q = model.token_probability(draft_time)
    accepted = 0
    for _ in range(k):
        if rng.random() < q:
            accepted += 1
        else:
            break
    return accepted


def expected_accepted(
    model: AcceptanceModel, k: int, draft_time: float | None = None
) -> float:
    """Mean accepted count: q * (1 - q**k) / (1 - q), or k when q = 1."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if model.kind == "deterministic-accept-all":
        return float(k)
    if model.kind == "frontier-coupled" and draft_time is None:
        raise ValueError("frontier-coupled expectation needs a draft_time")
    q = model.token_probability(draft_time if draft_time is not None else 0.0)
    if q == 1.0:
        return float(k)
    return q * (1.0 - q**k) / (1.0 - q)
