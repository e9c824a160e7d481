"""Closed-form moments, Chebyshev bounds, and empirical scaling experiments.

The collision counter C over N samples from a distribution with power sums
s2 = sum_x p(x)^2 and s3 = sum_x p(x)^3 has

    E[C]   = C(N,2) * s2,
    Var[C] = C(N,2) * (s2 - s2^2) + 6 * C(N,3) * (s3 - s2^2).

Under the uniform hypothesis (s2, s3) = (1/d, 1/d^2); averaged over a Haar
basis the fixed-input law gives E[s2] = 2/(d+1) and E[s3] = 6/((d+1)(d+2)).
The strict gap 2/(d+1) - 1/d > 0 is what the collision test detects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qcore import RngStream, require_dim
from .measure import Access, Backend, DeviceKind, classical_device, \
    projective_haar_device, random_hypothesis_device
from . import protocols

WILSON_Z_95 = 1.959963984540054  # two-sided 95% normal quantile


class SearchFailureError(RuntimeError):
    """Minimal-query search exceeded its cap without reaching the target."""


@dataclass(frozen=True)
class MomentPair:
    """Power sums (s2, s3) of an outcome distribution."""

    s2: float
    s3: float

    def __post_init__(self):
        if not (0.0 < self.s3 <= self.s2 <= 1.0):
            raise ValueError(f"invalid moment pair (s2={self.s2}, s3={self.s3})")


@dataclass(frozen=True)
class CollisionMoments:
    expectation: float
    variance: float

    def __post_init__(self):
        if self.variance < 0.0:
            raise ValueError(f"negative collision variance {self.variance}")


@dataclass(frozen=True)
class ScalingPoint:
    """One (dimension, minimal query count) measurement for the scaling fit."""

    d: int
    n_min: int

    def __post_init__(self):
        if self.n_min < 2:
            raise ValueError(f"n_min must be >= 2, got {self.n_min}")


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residual: float


@dataclass(frozen=True)
class SuccessEstimate:
    """Empirical success fraction with a Wilson 95% interval."""

    rate: float
    lower: float
    upper: float
    successes: int
    trials: int


def uniform_moments(d: int) -> MomentPair:
    """(1/d, 1/d^2): power sums of the uniform distribution on d outcomes."""
    d = require_dim(d)
    return MomentPair(s2=1.0 / d, s3=1.0 / d**2)


def haar_mean_moments(d: int) -> MomentPair:
    """Haar averages of the fixed-input law's power sums.

    The squared amplitudes of a Haar state are flat on the simplex, so
    E[s2] = 2/(d+1) and E[s3] = 6/((d+1)(d+2)) follow from Dirichlet moments.
    """
    d = require_dim(d)
    return MomentPair(s2=2.0 / (d + 1), s3=6.0 / ((d + 1) * (d + 2)))


def collision_moments(n: int, m: MomentPair) -> CollisionMoments:
    """Expectation and variance of the collision counter C over n samples."""
    if n < 2:
        raise ValueError(f"collision moments need n >= 2, got {n}")
    pairs = math.comb(n, 2)
    triples = math.comb(n, 3)
    expectation = pairs * m.s2
    variance = pairs * (m.s2 - m.s2**2) + 6.0 * triples * (m.s3 - m.s2**2)
    return CollisionMoments(expectation=expectation, variance=max(variance, 0.0))


def chebyshev_success(n: int, d: int) -> float:
    """Chebyshev lower bound on midpoint-threshold success probability.

    Uses the exact classical variance and the Haar-side upper bound
    Var <= C(n,2) * 2/d + C(n,3) * 36/d^2 (which absorbs the basis
    randomness); returns 1 - max(Var0, Var1)/halfgap^2 clipped to [0, 1],
    or 0 when the expectation gap is not positive.
    """
    if n < 2:
        raise ValueError(f"chebyshev_success needs n >= 2, got {n}")
    if d < 2:
        raise ValueError(f"chebyshev_success needs d >= 2, got {d}")
    pairs = math.comb(n, 2)
    triples = math.comb(n, 3)
    e0 = pairs / d
    e1 = pairs * 2.0 / (d + 1)
    half_gap = (e1 - e0) / 2.0
    if half_gap <= 0.0:
        return 0.0
    var0 = collision_moments(n, uniform_moments(d)).variance
    var1_upper = pairs * 2.0 / d + triples * 36.0 / d**2
    bound = 1.0 - max(var0, var1_upper) / half_gap**2
    return float(min(max(bound, 0.0), 1.0))


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z_95) -> tuple[float, float]:
    """Wilson score interval; valid at small trial counts."""
    if trials < 1:
        raise ValueError("wilson_interval needs at least one trial")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p = successes / trials
    denom = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def trial_device(d: int, hypothesis: str, access: Access, backend: Backend,
                  rng: RngStream):
    if hypothesis == "fair":
        return random_hypothesis_device(d, rng, access=access, backend=backend)
    if hypothesis == "classical":
        return classical_device(d, access=access, backend=backend)
    if hypothesis == "projective":
        return projective_haar_device(d, rng, access=access, backend=backend)
    raise ValueError(f"unknown hypothesis {hypothesis!r}")


def _collision_trial_success(d: int, n: int, backend: Backend, hypothesis: str,
                             rng: RngStream) -> bool:
    device = trial_device(d, hypothesis, Access.CLASSICAL_ONLY, backend,
                           rng.substream("device"))
    decision = protocols.collision_test(device, n, rng.substream("queries"))
    truth = (protocols.Verdict.QUANTUM
             if device.kind is DeviceKind.PROJECTIVE_HAAR
             else protocols.Verdict.CLASSICAL)
    return decision.verdict is truth


def _measure_twice_trial_success(d: int, reps: int, backend: Backend,
                                 hypothesis: str, rng: RngStream) -> bool:
    device = trial_device(d, hypothesis, Access.WITH_POST_STATE, backend,
                           rng.substream("device"))
    estimate = protocols.measure_twice(device, reps, rng.substream("queries"))
    decision = protocols.decide_sharpness(estimate, d)
    truth = (protocols.Verdict.QUANTUM
             if device.kind is DeviceKind.PROJECTIVE_HAAR
             else protocols.Verdict.CLASSICAL)
    return decision.verdict is truth


def empirical_success(
    d: int,
    n: int,
    trials: int,
    rng: RngStream,
    *,
    protocol: str = "collision",
    hypothesis: str = "fair",
    backend: Backend = Backend.FAST,
) -> SuccessEstimate:
    """Success probability of a protocol over freshly sampled hypotheses.

    Each trial draws a device (fair prior by default, or a fixed hypothesis),
    runs the protocol with budget ``n`` (queries for collision, reps for
    measure-twice), and scores the verdict against the device's true kind.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if protocol == "collision":
        run = _collision_trial_success
    elif protocol == "measure-twice":
        run = _measure_twice_trial_success
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    successes = sum(
        run(d, n, backend, hypothesis, rng.substream(t)) for t in range(trials)
    )
    lower, upper = wilson_interval(successes, trials)
    return SuccessEstimate(rate=successes / trials, lower=lower, upper=upper,
                           successes=successes, trials=trials)


SEARCH_CAP_FACTOR = 64  # cap n at 64 * sqrt(d): 3x the standard constant, with margin


def minimal_query_search(
    d: int,
    target: float,
    trials: int,
    rng: RngStream,
    *,
    protocol: str = "collision",
    backend: Backend = Backend.FAST,
) -> int:
    """Smallest budget n with empirical success >= target (fair prior).

    Geometric doubling from n = 2 followed by bisection; every evaluation at
    a given n reuses the same derived stream, so the search is a
    deterministic function of (d, target, trials, seed).
    """
    if not 0.5 < target < 1.0:
        raise ValueError(f"target must lie in (0.5, 1), got {target}")
    cap = math.ceil(SEARCH_CAP_FACTOR * math.sqrt(d))
    cache: dict[int, float] = {}

    def rate(n: int) -> float:
        if n not in cache:
            cache[n] = empirical_success(
                d, n, trials, rng.substream(("n", n)),
                protocol=protocol, backend=backend,
            ).rate
        return cache[n]

    n = 2
    while rate(n) < target:
        n *= 2
        if n > cap:
            raise SearchFailureError(
                f"no budget up to {cap} reached success {target} for d={d}"
            )
    lo, hi = n // 2, n  # rate(hi) >= target; lo failed (or is 1)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mid < 2:
            break
        if rate(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def scaling_exponent(points: Sequence[ScalingPoint]) -> ScalingFit:
    """Least-squares fit of log(n_min) against log(d)."""
    if len(points) < 3:
        raise ValueError("scaling fit needs at least 3 points")
    dims = [p.d for p in points]
    if len(set(dims)) != len(dims):
        raise ValueError("scaling fit needs distinct dimensions")
    x = np.log([p.d for p in points])
    y = np.log([p.n_min for p in points])
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    residual = float(np.sqrt(np.mean((y - fitted) ** 2)))
    return ScalingFit(slope=float(slope), intercept=float(intercept), residual=residual)
