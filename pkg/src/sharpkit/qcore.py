"""Complex linear algebra, seeded randomness, and Haar sampling primitives.

Everything downstream (devices, protocols, Weingarten checks) builds on the
carriers and samplers defined here.  Matrices are plain complex ``numpy``
arrays wrapped in thin validating dataclasses; all objects are immutable
after construction and all functions are pure, so values can be shared
freely between concurrent trials.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

# Tolerances are calibrated for double precision accumulated over O(d^3)
# operations; the dimension-scaled ones multiply by d at the check site.
UNITARITY_TOL = 1e-10
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
NORM_TOL = 1e-10
PSD_TOL = 1e-9
SOLVE_TOL = 1e-9


class DimensionError(ValueError):
    """A dimension is zero, negative, or degenerate for the requested use."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ResourceLimitError(ValueError):
    """A request exceeds a hard enumeration or dense-simulation cap."""


def require_dim(d: int) -> int:
    if int(d) != d or d < 1:
        raise DimensionError(f"dimension must be a positive integer, got {d!r}")
    return int(d)


# ---------------------------------------------------------------------------
# Reproducible random streams
# ---------------------------------------------------------------------------

def _hash64(*parts) -> int:
    """Stable 64-bit hash of the given parts (independent of PYTHONHASHSEED)."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass(eq=False)
class RngStream:
    """A named, reproducible random stream.

    Equal ``(seed, index)`` pairs produce bitwise-identical sample sequences
    regardless of thread schedule or host; distinct indices give streams that
    are statistically independent (PCG64 keyed through ``SeedSequence``).
    A stream must not be shared between concurrent tasks: derive a child per
    task with :meth:`substream`.
    """

    seed: int
    index: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.index < 0:
            raise ValueError("stream index must be nonnegative")

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.index,))
            self._gen = np.random.default_rng(key)
        return self._gen

    def substream(self, tag) -> "RngStream":
        """Derive an independent child stream from a label (int or str)."""
        return RngStream(self.seed, _hash64(self.index, tag))


# ---------------------------------------------------------------------------
# Matrix carriers
# ---------------------------------------------------------------------------

def as_complex_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite complex 2-d array (copy; caller keeps ownership)."""
    a = np.array(m, dtype=complex)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return a


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class UnitaryMatrix:
    """A d x d unitary; construction rejects matrices with |U†U - I| > tol*d."""

    matrix: np.ndarray

    def __post_init__(self):
        a = as_complex_matrix(self.matrix, "unitary")
        if a.shape[0] != a.shape[1]:
            raise ShapeError(f"unitary must be square, got shape {a.shape}")
        d = a.shape[0]
        residual = max_abs(a.conj().T @ a - np.eye(d))
        if residual > UNITARITY_TOL * d:
            raise ValueError(
                f"matrix is not unitary: residual {residual:.3e} > {UNITARITY_TOL * d:.3e}"
            )
        object.__setattr__(self, "matrix", _freeze(a))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class DensityState:
    """A density matrix: Hermitian, unit trace; PSD is checked on demand."""

    matrix: np.ndarray

    def __post_init__(self):
        a = as_complex_matrix(self.matrix, "density matrix")
        if a.shape[0] != a.shape[1]:
            raise ShapeError(f"density matrix must be square, got shape {a.shape}")
        if max_abs(a - a.conj().T) > HERMITICITY_TOL:
            raise ValueError("density matrix is not Hermitian within tolerance")
        tr = np.trace(a).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix trace {tr!r} is not 1 within tolerance")
        object.__setattr__(self, "matrix", _freeze(a))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate_psd(self, tol: float = PSD_TOL) -> None:
        """Eigenvalue check, deliberately not run per-construction (O(d^3))."""
        lo = float(np.linalg.eigvalsh(self.matrix)[0])
        if lo < -tol:
            raise ValueError(f"density matrix has eigenvalue {lo:.3e} < -{tol:.1e}")

    def purity(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))


@dataclass(frozen=True, eq=False)
class PureState:
    """A normalized state vector of d complex amplitudes."""

    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if a.size < 1:
            raise DimensionError("state vector must have at least one amplitude")
        if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
            raise ValueError("state vector contains NaN or Inf entries")
        norm_sq = float(np.sum(np.abs(a) ** 2))
        if abs(norm_sq - 1.0) > NORM_TOL:
            raise ValueError(f"state vector has squared norm {norm_sq!r}, expected 1")
        object.__setattr__(self, "amplitudes", _freeze(a))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def density(self) -> DensityState:
        a = self.amplitudes
        return DensityState(np.outer(a, a.conj()))


# ---------------------------------------------------------------------------
# Matrix operations (numpy-backed plumbing)
# ---------------------------------------------------------------------------

def adjoint(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return np.asarray(a).conj().T


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker (tensor) product."""
    return np.kron(np.asarray(a), np.asarray(b))


def max_abs(a: np.ndarray) -> float:
    """Entrywise maximum absolute value; 0.0 for empty input."""
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def solve(a: np.ndarray, b: np.ndarray, tol: float = SOLVE_TOL) -> np.ndarray:
    """Solve a @ x = b, verifying the residual against tol * n."""
    a = np.asarray(a)
    x = np.linalg.solve(a, b)
    residual = max_abs(a @ x - b)
    if residual > tol * a.shape[0]:
        raise np.linalg.LinAlgError(
            f"solve residual {residual:.3e} exceeds {tol * a.shape[0]:.3e}"
        )
    return x


def inverse(a: np.ndarray, tol: float = SOLVE_TOL) -> np.ndarray:
    """Matrix inverse with a residual check; raises LinAlgError when singular."""
    a = np.asarray(a)
    return solve(a, np.eye(a.shape[0], dtype=a.dtype), tol=tol)


# ---------------------------------------------------------------------------
# Haar sampling and standard states
# ---------------------------------------------------------------------------

def sample_haar_unitary(d: int, rng: RngStream) -> UnitaryMatrix:
    """Draw a d x d unitary from the Haar measure.

    QR of a complex Ginibre matrix with the column phases fixed so the
    triangular factor has a real positive diagonal; without the phase fix
    the QR convention biases the distribution.  See Mezzadri,
    arXiv:math-ph/0609050.
    """
    d = require_dim(d)
    g = rng.generator
    z = (g.standard_normal((d, d)) + 1j * g.standard_normal((d, d))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    q = q * (diag / np.abs(diag))
    return UnitaryMatrix(q)


def sample_haar_state(d: int, rng: RngStream) -> PureState:
    """Draw a Haar-random pure state (a normalized complex Gaussian vector).

    The squared amplitudes are exactly flat (Dirichlet(1,...,1)) on the
    probability simplex, which is what makes closed-form moment checks
    possible downstream.
    """
    d = require_dim(d)
    g = rng.generator
    z = g.standard_normal(d) + 1j * g.standard_normal(d)
    return PureState(z / np.linalg.norm(z))


def maximally_mixed(d: int) -> DensityState:
    """The state I/d."""
    d = require_dim(d)
    return DensityState(np.eye(d, dtype=complex) / d)


def basis_density(d: int, index: int = 0) -> DensityState:
    """The computational basis state |index><index| as a density matrix."""
    d = require_dim(d)
    if not 0 <= index < d:
        raise ValueError(f"basis index {index} out of range for dimension {d}")
    m = np.zeros((d, d), dtype=complex)
    m[index, index] = 1.0
    return DensityState(m)
