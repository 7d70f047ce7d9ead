"""Closed-form latency model for speculative decoding under a drafting frontier.

The model: a drafter that runs for time t produces a token that the verifier
accepts with probability f(t) = 1 - exp(-alpha * t).  A verification pass costs
verify_time, and the workload needs total_tokens accepted tokens overall.

Serial speculative decoding pays (t + verify_time) per round and banks f(t)
tokens in expectation, so its best latency is

    min over t > 0 of   total_tokens * (t + verify_time) / f(t).

The batch-parallel variant overlaps drafting with verification of the other
batch, so drafting longer than verify_time is free; its optimum sits exactly at
t = verify_time and costs total_tokens * verify_time / f(verify_time).

The serial optimum has no elementary closed form but reduces to the minus-one
real branch of the Lambert W function, implemented here directly (Halley
iteration with branch-appropriate seeds) so the module has no dependency beyond
numpy for the brute-force grid check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError

__all__ = [
    "FrontierParams",
    "SdOptimum",
    "PsdOptimum",
    "lambert_w",
    "frontier",
    "sd_optimal",
    "psd_time",
    "sd_psd_ratio",
    "sd_time_brute",
]

# Left edge of both real branches of W, as a float: -1/e.
_BRANCH_POINT = -math.exp(-1.0)

_HALLEY_TOL = 1e-13
_HALLEY_MAX_ITER = 80


@dataclass(frozen=True)
class FrontierParams:
    """Inputs of the latency model.

    alpha is the steepness of the acceptance frontier f(t) = 1 - exp(-alpha*t),
    verify_time the cost of one verification pass, and total_tokens the number
    of accepted tokens the workload must produce.  All three must be positive.
    """

    alpha: float
    verify_time: float
    total_tokens: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.verify_time > 0.0 and math.isfinite(self.verify_time)):
            raise ValueError(
                f"verify_time must be positive and finite, got {self.verify_time}"
            )
        if not (self.total_tokens > 0.0 and math.isfinite(self.total_tokens)):
            raise ValueError(
                f"total_tokens must be positive and finite, got {self.total_tokens}"
            )


@dataclass(frozen=True)
class SdOptimum:
    """Optimal serial operating point.

    t_star is the drafting time minimising latency, t_sd the resulting total
    latency, and lower_bound an analytic floor on t_sd that holds for every
    choice of drafting time.
    """

    t_star: float
    t_sd: float
    lower_bound: float


@dataclass(frozen=True)
class PsdOptimum:
    """Batch-parallel operating point: drafting time pinned to verify_time."""

    t_psd: float


def _halley(z: float, w0: float) -> float:
    """Polish a Lambert W seed with Halley's method; raise if it stalls.

    Convergence is judged on the step size, not the residual: a residual test
    scaled by |z| goes blind when z approaches zero on the minus-one branch
    (any w with a huge magnitude gives a tiny w*e^w), while a sub-ulp step
    bounds the error in w itself at every scale.
    """
    w = w0
    for _ in range(_HALLEY_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - z
        if f == 0.0:
            return w
        wp1 = w + 1.0
        if wp1 == 0.0:
            # Only reachable at the branch point itself, where w = -1 is exact.
            return w
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        step = f / denom
        w -= step
        if abs(step) <= _HALLEY_TOL * max(1.0, abs(w)):
            return w
    residual = abs(w * math.exp(w) - z)
    if residual <= 1e-12 * max(1.0, abs(z)):
        return w
    raise NumericError(f"lambert_w failed to converge for z={z!r}")


def lambert_w(branch: str, z: float) -> float:
    """Real Lambert W: solve w * exp(w) = z on the requested branch.

    branch "principal" covers z >= -1/e and returns w >= -1; branch
    "minus-one" covers -1/e <= z < 0 and returns w <= -1.  Arguments outside
    the branch domain raise ValueError; a stalled iteration raises
    NumericError rather than returning a junk value.
    """
    if branch not in ("principal", "minus-one"):
        raise ValueError(f"unknown branch {branch!r}")
    if not math.isfinite(z):
        raise ValueError(f"z must be finite, got {z}")
    if z < _BRANCH_POINT:
        raise ValueError(f"z={z} is below -1/e; no real solution exists")
    if z == _BRANCH_POINT:
        return -1.0

    if branch == "principal":
        if z == 0.0:
            return 0.0
        if z < -0.3:
            # Series around the branch point, upper sign.
            p = math.sqrt(2.0 * (math.e * z + 1.0))
            w0 = -1.0 + p - p * p / 3.0 + 11.0 * p**3 / 72.0
        elif z < 2.0:
            w0 = z / (1.0 + z)
        else:
            lz = math.log(z)
            w0 = lz - math.log(lz)
        return _halley(z, w0)

    # minus-one branch
    if z >= 0.0:
        raise ValueError(f"minus-one branch requires -1/e <= z < 0, got z={z}")
    if z <= -0.27:
        # Series around the branch point, lower sign.
        p = math.sqrt(2.0 * (math.e * z + 1.0))
        w0 = -1.0 - p - p * p / 3.0 - 11.0 * p**3 / 72.0
    else:
        # Asymptotic seed for z -> 0-.
        l1 = math.log(-z)
        l2 = math.log(-l1)
        w0 = l1 - l2 + l2 / l1
    return _halley(z, w0)


def frontier(params: FrontierParams, t: float) -> float:
    """Acceptance probability f(t) = 1 - exp(-alpha * t); requires t >= 0."""
    if t < 0.0:
        raise ValueError(f"drafting time must be nonnegative, got {t}")
    return -math.expm1(-params.alpha * t)


def sd_optimal(params: FrontierParams) -> SdOptimum:
    """Optimal serial latency, its drafting time, and an analytic lower bound.

    The stationarity condition (alpha*(t + V) + 1) * exp(-alpha*t) = 1 is
    solved exactly through the minus-one branch of W.  The returned latency is
    cross-checked against the equivalent form total_tokens * exp(alpha*t*) /
    alpha before being returned; disagreement means the root is bad and raises
    NumericError instead of propagating a wrong number.
    """
    alpha, v, r = params.alpha, params.verify_time, params.total_tokens
    av = alpha * v
    w = lambert_w("minus-one", -math.exp(-(av + 1.0)))
    t_star = -w / alpha - (v + 1.0 / alpha)
    if t_star <= 0.0:
        raise NumericError(
            f"optimal drafting time came out nonpositive ({t_star}) for {params}"
        )
    t_sd = r * (t_star + v) / frontier(params, t_star)
    alt = r * math.exp(alpha * t_star) / alpha
    if not math.isclose(t_sd, alt, rel_tol=1e-9):
        raise NumericError(
            f"inconsistent serial optimum: {t_sd} vs {alt} for {params}"
        )
    lower = r * (math.log(av + 1.0) / alpha + v) / (1.0 - 1.0 / (2.0 * (av + 1.0)))
    return SdOptimum(t_star=t_star, t_sd=t_sd, lower_bound=lower)


def psd_time(params: FrontierParams) -> PsdOptimum:
    """Batch-parallel latency: drafting overlaps verification, so t = verify_time."""
    t = params.total_tokens * params.verify_time / frontier(params, params.verify_time)
    return PsdOptimum(t_psd=t)


def sd_psd_ratio(params: FrontierParams) -> float:
    """Serial-over-parallel latency ratio; depends only on alpha * verify_time."""
    return sd_optimal(params).t_sd / psd_time(params).t_psd


def sd_time_brute(params: FrontierParams, grid_points: int = 100_000) -> float:
    """Grid-search estimate of the serial optimum, for validating sd_optimal.

    Minimises total_tokens * (t + V) / f(t) over a log-spaced grid from
    1e-6 * V to 50 * V.  Coarse grids defeat the purpose, so fewer than 1000
    points is rejected.
    """
    if grid_points < 1000:
        raise ValueError(f"grid_points must be at least 1000, got {grid_points}")
    v = params.verify_time
    ts = np.logspace(math.log10(1e-6 * v), math.log10(50.0 * v), grid_points)
    vals = params.total_tokens * (ts + v) / (-np.expm1(-params.alpha * ts))
    return float(vals.min())
