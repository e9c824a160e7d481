"""Numerical verification of the Weingarten/twirl machinery.

The Haar twirl E_U U^{x T} A U†^{x T} projects onto the span of permutation
operators; its coefficients are read off with the Weingarten matrix, the
inverse of the symmetric-group Gram matrix G[tau, pi] = d^{c(tau^-1 pi)}
(c counts cycles, fixed points included).  This module checks, at small
T and d, the identities that make classical-output protocols weak:

* G * Wg = I to numerical precision and the proximity bound
  entrywise-max |d^T * Wg - I| <= T^2/d whenever T^2 <= d,
* the cycle sum  sum_pi d^{c(pi) - T} = (1 + 1/d)(1 + 2/d)...(1 + (T-1)/d)
  (the unsigned Stirling numbers of the first kind in disguise),
* Monte Carlo twirls against the Weingarten closed form,
* the exact total variation between T uniform outcomes and the
  Haar-averaged i.i.d. fixed-input outcome law, against the 3T^2/(2d)
  ceiling that bounds any classical-output distinguisher's advantage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations as _all_permutations
from typing import Iterator, Sequence

import numpy as np

from .qcore import (
    ResourceLimitError,
    RngStream,
    max_abs,
    require_dim,
    solve,
)

Permutation = tuple[int, ...]

WEINGARTEN_T_CAP = 5      # table size T! x T!, so 120 x 120 at most
CYCLE_SUM_T_CAP = 8       # full S_T enumeration, 8! = 40320
TWIRL_T_CAP = 3
TWIRL_D_CAP = 4
TV_T_CAP = 4
TV_D_CAP = 64
INVERSION_TOL = 1e-8


class BoundViolationError(RuntimeError):
    """A verified quantity exceeded its analytic bound."""


# ---------------------------------------------------------------------------
# Permutations
# ---------------------------------------------------------------------------

def validate_permutation(p: Sequence[int]) -> Permutation:
    p = tuple(int(x) for x in p)
    if sorted(p) != list(range(len(p))):
        raise ValueError(f"{p!r} is not a permutation of 0..{len(p) - 1}")
    return p


def cycle_count(p: Sequence[int]) -> int:
    """Number of cycles, fixed points included."""
    p = validate_permutation(p)
    seen = [False] * len(p)
    cycles = 0
    for start in range(len(p)):
        if seen[start]:
            continue
        cycles += 1
        j = start
        while not seen[j]:
            seen[j] = True
            j = p[j]
    return cycles


def compose(p: Sequence[int], q: Sequence[int]) -> Permutation:
    """(p o q)(i) = p[q[i]]."""
    return tuple(p[q[i]] for i in range(len(q)))


def inverse_permutation(p: Sequence[int]) -> Permutation:
    inv = [0] * len(p)
    for i, x in enumerate(p):
        inv[x] = i
    return tuple(inv)


def symmetric_group(t: int) -> tuple[Permutation, ...]:
    return tuple(_all_permutations(range(t)))


# ---------------------------------------------------------------------------
# Weingarten table
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WeingartenTable:
    """Gram matrix G[tau, pi] = d^{c(tau^-1 pi)} over S_T and its inverse."""

    t: int
    d: int
    perms: tuple[Permutation, ...]
    gram: np.ndarray
    wg: np.ndarray


def weingarten_table(t: int, d: int) -> WeingartenTable:
    """Build the Gram matrix from cycle counts and invert it directly.

    Requires d >= T: below that the permutation operators become linearly
    dependent and the Gram matrix singular.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if t > WEINGARTEN_T_CAP:
        raise ResourceLimitError(
            f"weingarten_table is capped at T <= {WEINGARTEN_T_CAP} (T! x T! table)"
        )
    d = require_dim(d)
    if d < t:
        raise ValueError(f"weingarten_table requires d >= T (got d={d}, T={t})")
    perms = symmetric_group(t)
    size = len(perms)
    gram = np.empty((size, size))
    for a, tau in enumerate(perms):
        tau_inv = inverse_permutation(tau)
        for b, pi in enumerate(perms):
            gram[a, b] = float(d) ** cycle_count(compose(tau_inv, pi))
    wg = solve(gram, np.eye(size))
    residual = max_abs(gram @ wg - np.eye(size))
    if residual > INVERSION_TOL:
        raise np.linalg.LinAlgError(
            f"Gram inversion residual {residual:.3e} exceeds {INVERSION_TOL:.1e}"
        )
    return WeingartenTable(t=t, d=d, perms=perms, gram=gram, wg=wg)


def wg_identity_gap(t: int, d: int, norm: str = "entrywise") -> float:
    """Deviation of d^T * Wg from the identity, checked against T^2/d.

    ``norm`` selects the reading: "entrywise" (max absolute entry, the one
    the bound is asserted against) or "operator" (spectral norm, reported
    for comparison).  Requires T^2 <= d, the regime where the bound holds.
    """
    if t * t > d:
        raise ValueError(f"wg_identity_gap requires T^2 <= d (got T={t}, d={d})")
    table = weingarten_table(t, d)
    deviation = float(d) ** t * table.wg - np.eye(len(table.perms))
    entrywise = max_abs(deviation)
    bound = t * t / d
    if entrywise > bound:
        raise BoundViolationError(
            f"entrywise |d^T Wg - I| = {entrywise:.6e} exceeds T^2/d = {bound:.6e} "
            f"at (T={t}, d={d})"
        )
    if norm == "entrywise":
        return entrywise
    if norm == "operator":
        return float(np.linalg.norm(deviation, ord=2))
    raise ValueError(f"unknown norm {norm!r} (use 'entrywise' or 'operator')")


def cycle_sum_identity(t: int, d: int) -> tuple[float, float]:
    """Enumerated sum over S_T of d^{c(pi) - T} vs the rising-factor product."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if t > CYCLE_SUM_T_CAP:
        raise ResourceLimitError(
            f"cycle_sum_identity enumerates T! permutations; capped at T <= {CYCLE_SUM_T_CAP}"
        )
    d = require_dim(d)
    lhs = sum(float(d) ** (cycle_count(p) - t) for p in _all_permutations(range(t)))
    rhs = 1.0
    for k in range(1, t):
        rhs *= 1.0 + k / d
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# Twirl comparison
# ---------------------------------------------------------------------------

def permutation_operator(p: Sequence[int], d: int) -> np.ndarray:
    """The operator permuting T tensor factors: |x_1..x_T> -> |x_{p^-1(1)}..>.

    This assignment makes p -> P(p) a group homomorphism, so
    Tr(P(tau)† P(pi)) = d^{c(tau^-1 pi)} matches the Gram convention.
    """
    p = validate_permutation(p)
    t = len(p)
    dim = d**t
    op = np.zeros((dim, dim))
    p_inv = inverse_permutation(p)
    # Output tuple y has y_k = x_{p^-1(k)}.
    strides = [d ** (t - 1 - k) for k in range(t)]
    for code in range(dim):
        x = [(code // strides[k]) % d for k in range(t)]
        y = [x[p_inv[k]] for k in range(t)]
        row = sum(y[k] * strides[k] for k in range(t))
        op[row, code] = 1.0
    return op


def twirl_closed_form(a: np.ndarray, t: int, d: int) -> np.ndarray:
    """Weingarten expression for the twirl: sum Tr(A tau^-1) Wg[tau,pi] pi."""
    a = np.asarray(a, dtype=complex)
    dim = d**t
    if a.shape != (dim, dim):
        raise ValueError(f"operator must be {dim} x {dim} for (T={t}, d={d})")
    table = weingarten_table(t, d)
    ops = [permutation_operator(p, d) for p in table.perms]
    inv_index = [table.perms.index(inverse_permutation(p)) for p in table.perms]
    traces = np.array([np.trace(a @ ops[inv_index[i]]) for i in range(len(ops))])
    coeffs = table.wg @ traces
    out = np.zeros((dim, dim), dtype=complex)
    for c, op in zip(coeffs, ops):
        out += c * op
    return out


def _kron_power_batch(us: np.ndarray, t: int) -> np.ndarray:
    """U^{x T} for a batch of unitaries us with shape (B, d, d)."""
    out = us
    d = us.shape[-1]
    for _ in range(t - 1):
        n = out.shape[-1]
        out = np.einsum("bij,bkl->bikjl", out, us).reshape(-1, n * d, n * d)
    return out


def _haar_batch(d: int, b: int, g: np.random.Generator) -> np.ndarray:
    """b Haar unitaries, shape (b, d, d): batched Ginibre QR with phase fix."""
    z = (g.standard_normal((b, d, d)) + 1j * g.standard_normal((b, d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (diag / np.abs(diag))[:, None, :]


def twirl_monte_carlo(
    a: np.ndarray,
    t: int,
    d: int,
    samples: int,
    rng: RngStream,
    chunk: int = 512,
) -> np.ndarray:
    """Monte Carlo twirl: average of U^{x T} A U†^{x T} over Haar samples.

    Samples are drawn in chunks, each chunk on its own derived stream, so a
    parallel driver splitting chunks across workers reproduces the serial
    result.
    """
    a = np.asarray(a, dtype=complex)
    dim = d**t
    if a.shape != (dim, dim):
        raise ValueError(f"operator must be {dim} x {dim} for (T={t}, d={d})")
    total = np.zeros((dim, dim), dtype=complex)
    done = 0
    chunk_index = 0
    while done < samples:
        b = min(chunk, samples - done)
        stream = rng.substream(("chunk", chunk_index))
        us = _haar_batch(d, b, stream.generator)
        big = _kron_power_batch(us, t)
        rotated = (big @ a) @ big.conj().transpose(0, 2, 1)
        total += rotated.sum(axis=0)
        done += b
        chunk_index += 1
    return total / samples


@dataclass(frozen=True)
class TwirlComparison:
    """Max-entry deviation between the MC and closed-form twirls.

    ``noise_scale`` is the 1/sqrt(samples) yardstick the deviation should
    track as the sample count grows.
    """

    deviation: float
    noise_scale: float
    samples: int


def twirl_compare(a: np.ndarray, t: int, d: int, samples: int, rng: RngStream) -> TwirlComparison:
    if t > TWIRL_T_CAP or d > TWIRL_D_CAP:
        raise ResourceLimitError(
            f"twirl_compare is capped at T <= {TWIRL_T_CAP}, d <= {TWIRL_D_CAP}"
        )
    if samples < 1000:
        raise ValueError(f"twirl_compare needs >= 1000 samples, got {samples}")
    closed = twirl_closed_form(a, t, d)
    mc = twirl_monte_carlo(a, t, d, samples, rng)
    return TwirlComparison(
        deviation=max_abs(mc - closed),
        noise_scale=1.0 / math.sqrt(samples),
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Total variation for i.i.d. fixed-input protocols
# ---------------------------------------------------------------------------

def _partitions(total: int, max_parts: int, largest: int | None = None) -> Iterator[tuple[int, ...]]:
    """Integer partitions of ``total`` into at most ``max_parts`` parts."""
    if largest is None:
        largest = total
    if total == 0:
        yield ()
        return
    if max_parts == 0:
        return
    for first in range(min(total, largest), 0, -1):
        for rest in _partitions(total - first, max_parts - 1, first):
            yield (first,) + rest


def tv_iid_protocol(d: int, t: int) -> tuple[float, float]:
    """Exact TV(uniform^T, Haar-averaged i.i.d. fixed-input law) and its bound.

    The Haar-averaged probability of an outcome tuple depends only on its
    multiplicity pattern: with multiplicities m_x summing to T,
    E prod_t p(x_t) = (prod_x m_x!) * (d-1)! / (d+T-1)!  (flat-simplex
    moments).  Tuples are grouped by integer partitions of T into at most d
    parts, so nothing enumerates d^T outcomes; the sum is exact rational
    arithmetic.  Returns (tv, 3T^2/(2d)) and raises when the bound fails.
    """
    d = require_dim(d)
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if t > TV_T_CAP or d > TV_D_CAP:
        raise ResourceLimitError(f"tv_iid_protocol is capped at T <= {TV_T_CAP}, d <= {TV_D_CAP}")
    uniform_mass = Fraction(1, d**t)
    total = Fraction(0)
    for part in _partitions(t, max_parts=d):
        k = len(part)
        # Distinct outcome values for the k distinct slots, divided by
        # permutations among equal part sizes, times arrangements of the
        # tuple positions.
        size_multiplicities: dict[int, int] = {}
        for size in part:
            size_multiplicities[size] = size_multiplicities.get(size, 0) + 1
        ways_values = Fraction(math.perm(d, k))
        for r in size_multiplicities.values():
            ways_values /= math.factorial(r)
        arrangements = Fraction(math.factorial(t))
        for size in part:
            arrangements /= math.factorial(size)
        count = ways_values * arrangements
        haar_mass = Fraction(math.prod(math.factorial(size) for size in part),
                             math.perm(d + t - 1, t))
        total += count * abs(uniform_mass - haar_mass)
    tv = float(total / 2)
    bound = 3.0 * t * t / (2.0 * d)
    if tv > bound:
        raise BoundViolationError(
            f"tv {tv:.6e} exceeds 3T^2/(2d) = {bound:.6e} at (d={d}, T={t})"
        )
    return tv, bound
