"""The three distinguishing protocols and their decision rules.

* :func:`collision_test` -- classical-only access; counts output collisions
  over N fixed-input queries (a birthday-paradox test: the Haar projective
  device's fixed-input output law has roughly twice the collision mass of
  uniform).
* :func:`measure_twice` -- post-measurement-state access; measures I/d,
  measures the returned post-state again, and records the index-match rate,
  an unbiased estimator of the sharpness for normal Kraus operators.
* :func:`robust_measure_twice` -- the adversarially robust variant: a fair
  coin sampled after the first query routes either the post-state (coin 0)
  or a fresh I/d (coin 1) into the second query.  Since a dishonest device
  cannot see the coin, the coin-1 subsample provides an honesty baseline
  whose match rate must sit at 1/d.
* :func:`controlled_swap_equivalence_check` -- dense verification that the
  coin routing is equivalent to the literal circuit in which a controlled-
  SWAP conditionally exchanges the fresh register with the post-state
  register before the second query.

Protocol routines are pure given (device, rng); an experiment harness
parallelizes across independent trials by deriving one stream per trial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import measure as _measure
from .qcore import (
    DimensionError,
    ResourceLimitError,
    RngStream,
    basis_density,
    maximally_mixed,
    max_abs,
)
from .measure import (
    Access,
    Backend,
    Device,
    DeviceKind,
    povm_of,
    sharpness,
)


class Verdict(Enum):
    CLASSICAL = "classical"
    QUANTUM = "quantum"


@dataclass(frozen=True)
class Decision:
    """A verdict with the statistic and threshold that produced it.

    The rule is fixed per protocol: QUANTUM iff statistic >= threshold
    (ties go to QUANTUM, a documented arbitrary choice).
    """

    verdict: Verdict
    statistic: float
    threshold: float


@dataclass(frozen=True)
class SharpnessEstimate:
    """Match-rate estimate of the sharpness from repeated double measurements.

    ``bias`` is populated for custom devices, where the true sharpness is
    computable from the instrument; it exposes the estimator's bias when the
    Kraus operators are not normal.
    """

    mean: float
    reps: int
    stderr: float
    bias: float | None = None


@dataclass(frozen=True)
class RobustReport:
    """Outcome of the coin-routed protocol.

    ``estimate`` comes from the coin-0 subsample (the plain protocol);
    ``baseline_rate`` is the coin-1 match rate, which honest devices of
    either kind pin at 1/d; ``honest`` is false iff the baseline deviates
    from 1/d by more than four binomial standard errors.
    """

    estimate: SharpnessEstimate
    baseline_rate: float
    honest: bool


class InsufficientSubsampleError(RuntimeError):
    """All coins landed on one side; raise reps to populate both branches."""


def default_collision_queries(d: int) -> int:
    """ceil(20 * sqrt(d)), the standard budget for the collision test."""
    return math.ceil(20.0 * math.sqrt(d))


def collision_threshold(n: int, d: int) -> float:
    """Midpoint of the two hypotheses' expected collision counts.

    E[C] = C(n,2) * s2 with s2 = 1/d under the classical hypothesis and
    s2 averaging 2/(d+1) under the Haar projective one; thresholding at the
    midpoint realizes the same constant-error separation as additive-error
    estimation of E[C], and is simpler.
    """
    return math.comb(n, 2) * (1.0 / d + 2.0 / (d + 1)) / 2.0


def count_collisions(indices: np.ndarray, d: int | None = None) -> int:
    """C = sum_{a<b} 1[x_a = x_b], via outcome multiplicities."""
    indices = np.asarray(indices)
    counts = np.bincount(indices, minlength=0 if d is None else d)
    counts = counts[counts > 1].astype(np.int64)
    return int(np.sum(counts * (counts - 1) // 2))


def collision_decision(c: int, n: int, d: int) -> Decision:
    """Apply the midpoint rule to a collision count."""
    threshold = collision_threshold(n, d)
    verdict = Verdict.QUANTUM if c >= threshold else Verdict.CLASSICAL
    return Decision(verdict=verdict, statistic=float(c), threshold=threshold)


def _require_protocol_dim(d: int) -> None:
    if d < 2:
        raise DimensionError(
            "protocols require dimension >= 2 (at d = 1 the two hypotheses coincide)"
        )


def collision_test(device: Device, n: int | None, rng: RngStream) -> Decision:
    """Classify a classical-only device from N fresh fixed-input queries.

    Each query inputs a fresh |0><0|; the statistic is the collision count
    C and the verdict is QUANTUM iff C >= the midpoint threshold.  ``n``
    defaults to ceil(20 * sqrt(d)).
    """
    d = device.dim
    _require_protocol_dim(d)
    if device.access is not Access.CLASSICAL_ONLY:
        raise _measure.AccessError(
            "collision_test is a classical-access protocol; build the device "
            "with classical-only access"
        )
    if n is None:
        n = default_collision_queries(d)
    if n < 2:
        raise ValueError(f"collision test needs at least 2 queries, got {n}")
    if device.backend is Backend.FAST:
        indices = device.sample_fixed_input(n, rng)
    else:
        fixed = basis_density(d, 0)
        indices = np.array([device.query(fixed, rng).index for _ in range(n)])
    return collision_decision(count_collisions(indices, d), n, d)


def _sample_chain(p: np.ndarray, t: np.ndarray, reps: int,
                  g: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample (i, j) pairs from first-outcome law p and transition rows t."""
    first = g.choice(len(p), size=reps, p=p)
    second = np.empty(reps, dtype=np.int64)
    for i in np.unique(first):
        mask = first == i
        second[mask] = g.choice(t.shape[1], size=int(mask.sum()), p=t[i])
    return first, second


def _estimate_from_matches(matches: int, reps: int, device) -> SharpnessEstimate:
    mean = matches / reps
    stderr = math.sqrt(mean * (1.0 - mean) / reps)
    bias = None
    if isinstance(device, Device) and device.kind is DeviceKind.CUSTOM:
        bias = abs(mean - sharpness(povm_of(device.instrument)))
    return SharpnessEstimate(mean=mean, reps=reps, stderr=stderr, bias=bias)


def measure_twice(device, reps: int, rng: RngStream) -> SharpnessEstimate:
    """Estimate the sharpness by measuring I/d and then the post-state again.

    Each rep queries on I/d, obtains (i, post-state), queries on the
    post-state to obtain j, and records 1[i = j].  The match rate is an
    unbiased estimator of the sharpness whenever the device's Kraus
    operators are normal (projective and classical devices both qualify).

    Trusted :class:`~sharpkit.measure.Device` instances run through the
    exact two-step outcome chain (vectorized); any other object with a
    ``query(state, rng)`` method is driven query by query.
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    _require_protocol_dim(device.dim)
    if not isinstance(device, Device):
        return _measure_twice_queries(device, reps, rng)
    device._require_post_state()
    g = rng.generator
    d = device.dim
    if device.backend is Backend.FAST:
        if device.kind is DeviceKind.PROJECTIVE_HAAR:
            # Projective repetition: the second outcome always reproduces
            # the first, regardless of the basis.
            matches = reps
        else:
            matches = int(np.sum(g.integers(0, d, reps) == g.integers(0, d, reps)))
        return _estimate_from_matches(matches, reps, device)
    p, t = device.repeat_transition()
    first, second = _sample_chain(p, t, reps, g)
    return _estimate_from_matches(int(np.sum(first == second)), reps, device)


def _measure_twice_queries(device, reps: int, rng: RngStream) -> SharpnessEstimate:
    """Query-by-query fallback for duck-typed devices (e.g. test doubles)."""
    mixed = maximally_mixed(device.dim)
    matches = 0
    for _ in range(reps):
        out1 = device.query(mixed, rng)
        if out1.post_state is None:
            raise _measure.AccessError("device returned no post-state; cannot measure twice")
        out2 = device.query(out1.post_state, rng)
        matches += int(out1.index == out2.index)
    return _estimate_from_matches(matches, reps, device)


def baseline_honesty_threshold(d: int, n_baseline: int) -> float:
    """Four binomial standard errors around the honest baseline rate 1/d."""
    p0 = 1.0 / d
    return 4.0 * math.sqrt(p0 * (1.0 - p0) / n_baseline)


def robust_measure_twice(device, reps: int, rng: RngStream) -> RobustReport:
    """Coin-routed variant of :func:`measure_twice`.

    After the first query a fair coin decides the second query's input: the
    post-state (coin 0, the plain protocol) or a fresh I/d (coin 1).  The
    device never sees the coin, so it cannot adapt; honest devices give a
    coin-1 match rate of 1/d, and the report's honesty flag trips when the
    baseline strays more than four binomial standard errors from it.
    """
    if reps < 2:
        raise ValueError(f"robust protocol needs reps >= 2, got {reps}")
    _require_protocol_dim(device.dim)
    d = device.dim
    g = rng.generator
    if isinstance(device, Device):
        device._require_post_state()
        coins = g.integers(0, 2, size=reps)
        n0 = int(np.sum(coins == 0))
        n1 = reps - n0
        if n0 == 0 or n1 == 0:
            raise InsufficientSubsampleError(
                f"all {reps} coins landed on one side; raise reps so both "
                "branches are populated"
            )
        if device.backend is Backend.FAST:
            if device.kind is DeviceKind.PROJECTIVE_HAAR:
                matches0 = n0
            else:
                matches0 = int(np.sum(g.integers(0, d, n0) == g.integers(0, d, n0)))
            matches1 = int(np.sum(g.integers(0, d, n1) == g.integers(0, d, n1)))
        else:
            p, t = device.repeat_transition()
            f0, s0 = _sample_chain(p, t, n0, g)
            matches0 = int(np.sum(f0 == s0))
            f1 = g.choice(len(p), size=n1, p=p)
            s1 = g.choice(len(p), size=n1, p=p)
            matches1 = int(np.sum(f1 == s1))
    else:
        matches0 = matches1 = n0 = n1 = 0
        mixed = maximally_mixed(d)
        for _ in range(reps):
            out1 = device.query(mixed, rng)
            coin = int(g.integers(0, 2))
            if coin == 0:
                out2 = device.query(out1.post_state, rng)
                matches0 += int(out1.index == out2.index)
                n0 += 1
            else:
                out2 = device.query(mixed, rng)
                matches1 += int(out1.index == out2.index)
                n1 += 1
        if n0 == 0 or n1 == 0:
            raise InsufficientSubsampleError(
                f"all {reps} coins landed on one side; raise reps so both "
                "branches are populated"
            )
    estimate = _estimate_from_matches(matches0, n0, device)
    baseline = matches1 / n1
    honest = abs(baseline - 1.0 / d) <= baseline_honesty_threshold(d, n1)
    return RobustReport(estimate=estimate, baseline_rate=baseline, honest=honest)


def decide_sharpness(est: SharpnessEstimate, d: int) -> Decision:
    """QUANTUM iff the estimated sharpness is >= 1/2.

    The hypotheses sit at 1 and 1/d <= 1/2, so 1/2 is the midpoint of the
    constant gap's worst case; ties go to QUANTUM.
    """
    if d < 2:
        raise DimensionError("decide_sharpness requires d >= 2")
    verdict = Verdict.QUANTUM if est.mean >= 0.5 else Verdict.CLASSICAL
    return Decision(verdict=verdict, statistic=est.mean, threshold=0.5)


# ---------------------------------------------------------------------------
# Controlled-SWAP equivalence of the coin routing
# ---------------------------------------------------------------------------

CSWAP_MAX_DIM = 4  # joint system is 2 * d * d dimensional


def _swap_operator(d: int) -> np.ndarray:
    s = np.zeros((d * d, d * d))
    for a in range(d):
        for b in range(d):
            s[a * d + b, b * d + a] = 1.0
    return s


def _partial_trace_first(m: np.ndarray, d: int) -> np.ndarray:
    """Trace out the first d-dimensional factor of a (d*d) x (d*d) matrix."""
    return np.einsum("aiaj->ij", m.reshape(d, d, d, d))


def cswap_circuit_table(device: Device, *, measure_control_first: bool = False) -> np.ndarray:
    """Exact joint law p(coin, i, j) of the literal controlled-SWAP circuit.

    The first query measures I/d giving (i, post-state).  A control qubit
    prepared in |+> and a fresh I/d register join the post-state register; a
    controlled-SWAP exchanges the two d-dimensional registers when the
    control is |1>; the control is measured in the computational basis
    (before or after the routing, selectable for cross-checks); the second
    query measures the routed register.
    """
    d = device.dim
    if d > CSWAP_MAX_DIM:
        raise ResourceLimitError(
            f"dense controlled-SWAP simulation is capped at d <= {CSWAP_MAX_DIM}"
        )
    device._require_post_state()
    mixed = np.eye(d, dtype=complex) / d
    p = device.base_probs()
    k = len(p)
    swap = _swap_operator(d)
    cswap = np.block([
        [np.eye(d * d), np.zeros((d * d, d * d))],
        [np.zeros((d * d, d * d)), swap],
    ])
    plus = np.full((2, 2), 0.5)
    table = np.zeros((2, k, k))
    for i in range(k):
        post = device.post_density(i, mixed)
        if measure_control_first:
            for coin in (0, 1):
                weight = 0.5
                joint = np.kron(mixed, post)
                if coin == 1:
                    joint = swap @ joint @ swap
                rho_routed = _partial_trace_first(joint, d)
                table[coin, i] = p[i] * weight * device.outcome_probs(rho_routed)
            continue
        joint = np.kron(plus, np.kron(mixed, post))
        evolved = cswap @ joint @ cswap.conj().T
        for coin in (0, 1):
            block = evolved[coin * d * d:(coin + 1) * d * d,
                            coin * d * d:(coin + 1) * d * d]
            weight = float(np.trace(block).real)
            rho_routed = _partial_trace_first(block, d) / weight
            table[coin, i] = p[i] * weight * device.outcome_probs(rho_routed)
    return table


def coin_routed_table(device: Device) -> np.ndarray:
    """Exact joint law p(coin, i, j) of the coin-routing implementation."""
    device._require_post_state()
    p, t = device.repeat_transition()
    base = device.base_probs()
    table = np.zeros((2, len(p), len(p)))
    table[0] = 0.5 * p[:, None] * t
    table[1] = 0.5 * p[:, None] * base[None, :]
    return table


def sample_coin_routed(device: Device, shots: int, rng: RngStream) -> np.ndarray:
    """Empirical joint frequency table of (coin, i, j) over ``shots`` runs."""
    g = rng.generator
    p, t = device.repeat_transition()
    base = device.base_probs()
    k = len(p)
    coins = g.integers(0, 2, size=shots)
    first = g.choice(k, size=shots, p=p)
    second = np.empty(shots, dtype=np.int64)
    mask1 = coins == 1
    second[mask1] = g.choice(k, size=int(mask1.sum()), p=base)
    for i in np.unique(first[~mask1]):
        sel = (~mask1) & (first == i)
        second[sel] = g.choice(k, size=int(sel.sum()), p=t[i])
    table = np.zeros((2, k, k))
    np.add.at(table, (coins, first, second), 1.0)
    return table / shots


def controlled_swap_equivalence_check(
    d: int,
    reps: int,
    rng: RngStream,
    *,
    table_tol: float = 1e-10,
    tv_tol: float = 0.02,
) -> bool:
    """Confirm the coin routing reproduces the controlled-SWAP circuit.

    For a Haar projective device (basis drawn from ``rng``) and a classical
    device, compares the exact circuit and routing tables entrywise (both
    control-measurement orders), then draws ``reps`` routed samples and
    checks the empirical law against the circuit table in total variation.
    """
    _require_protocol_dim(d)
    if d > CSWAP_MAX_DIM:
        raise ResourceLimitError(
            f"dense controlled-SWAP simulation is capped at d <= {CSWAP_MAX_DIM}"
        )
    devices = [
        _measure.projective_haar_device(
            d, rng.substream("basis"), access=Access.WITH_POST_STATE,
            backend=Backend.DENSE,
        ),
        _measure.classical_device(d, access=Access.WITH_POST_STATE,
                                  backend=Backend.DENSE),
    ]
    for tag, device in zip(("projective", "classical"), devices):
        circuit = cswap_circuit_table(device)
        pre_measured = cswap_circuit_table(device, measure_control_first=True)
        routed = coin_routed_table(device)
        if max_abs(circuit - routed) > table_tol:
            return False
        if max_abs(circuit - pre_measured) > table_tol:
            return False
        empirical = sample_coin_routed(device, reps, rng.substream(("shots", tag)))
        if 0.5 * float(np.sum(np.abs(empirical - circuit))) > tv_tol:
            return False
    return True
