"""Measurement formalism and queryable black-box devices.

A measurement is carried either as a POVM (effects ``M_i >= 0`` summing to
the identity, outcome probabilities ``Tr(rho M_i)``) or as an instrument
(Kraus operators ``K_i`` with ``sum K_i† K_i = I``), which additionally
defines the post-measurement state ``K_i rho K_i† / Tr(K_i rho K_i†)``.

Devices wrap one of three behaviours behind a uniform query interface:

* ``CLASSICAL_UNIFORM`` -- outputs an index uniformly at random and leaves
  the input state untouched (a classical random number generator),
* ``PROJECTIVE_HAAR``   -- a projective measurement in a fixed random basis
  ``{U|i><i|U†}``, the basis drawn once from the Haar measure,
* ``CUSTOM``            -- any caller-supplied instrument.

Devices are stateless and memoryless across queries (every query uses the
same fixed basis), are immutable, and may be shared between concurrent
trials; the per-trial ``RngStream`` must not be.  The fast backend never
materializes the d x d unitary: for the fixed-input sampling path it keeps
only the d outcome amplitudes plus a cumulative table, which is what makes
dimensions up to 2**20 practical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .qcore import (
    DensityState,
    RngStream,
    ShapeError,
    UnitaryMatrix,
    as_complex_matrix,
    max_abs,
    require_dim,
    sample_haar_state,
    sample_haar_unitary,
)

COMPLETENESS_TOL = 1e-9
EFFECT_HERMITICITY_TOL = 1e-9
EFFECT_PSD_TOL = 1e-9
NORMALITY_TOL = 1e-9
POST_STATE_TRACE_TOL = 1e-9


class UnsupportedBackendError(ValueError):
    """The requested backend cannot serve this device kind or query."""


class AccessError(ValueError):
    """The device's access mode does not grant the requested resource."""


# ---------------------------------------------------------------------------
# POVMs and instruments
# ---------------------------------------------------------------------------

def _coerce_operators(ops, name: str) -> tuple[np.ndarray, ...]:
    if len(ops) == 0:
        raise ValueError(f"{name} must contain at least one operator")
    mats = tuple(as_complex_matrix(m, name) for m in ops)
    d = mats[0].shape[0]
    for m in mats:
        if m.shape != (d, d):
            raise ShapeError(f"all {name} operators must share shape ({d}, {d})")
    for m in mats:
        m.setflags(write=False)
    return mats


@dataclass(frozen=True, eq=False)
class Povm:
    """Effect operators M_i, Hermitian and summing to the identity."""

    effects: tuple[np.ndarray, ...]

    def __post_init__(self):
        effects = _coerce_operators(self.effects, "POVM effect")
        d = effects[0].shape[0]
        for i, m in enumerate(effects):
            if max_abs(m - m.conj().T) > EFFECT_HERMITICITY_TOL:
                raise ValueError(f"effect {i} is not Hermitian within tolerance")
        if max_abs(sum(effects) - np.eye(d)) > COMPLETENESS_TOL:
            raise ValueError("effects do not sum to the identity within tolerance")
        object.__setattr__(self, "effects", effects)

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.effects)

    def validate_psd(self, tol: float = EFFECT_PSD_TOL) -> None:
        """On-demand eigenvalue check; reports the first offending effect."""
        for i, m in enumerate(self.effects):
            lo = float(np.linalg.eigvalsh(m)[0])
            if lo < -tol:
                raise ValueError(f"effect {i} has eigenvalue {lo:.3e} < -{tol:.1e}")


@dataclass(frozen=True, eq=False)
class Instrument:
    """Kraus operators K_i with sum K_i† K_i = I.

    ``is_normal`` records whether every commutator [K_i, K_i†] vanishes
    within tolerance; the measuring-twice estimator is unbiased exactly for
    normal Kraus operators, so the flag is computed eagerly.
    """

    kraus: tuple[np.ndarray, ...]
    is_normal: bool = field(init=False)

    def __post_init__(self):
        kraus = _coerce_operators(self.kraus, "Kraus operator")
        d = kraus[0].shape[0]
        completeness = sum(k.conj().T @ k for k in kraus)
        if max_abs(completeness - np.eye(d)) > COMPLETENESS_TOL:
            raise ValueError("Kraus operators do not satisfy sum K†K = I within tolerance")
        normal = all(
            max_abs(k @ k.conj().T - k.conj().T @ k) <= NORMALITY_TOL for k in kraus
        )
        object.__setattr__(self, "kraus", kraus)
        object.__setattr__(self, "is_normal", normal)

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.kraus)


def povm_of(inst: Instrument) -> Povm:
    """The POVM induced by an instrument: M_i = K_i† K_i, order preserved."""
    return Povm(tuple(k.conj().T @ k for k in inst.kraus))


def sharpness(povm: Povm) -> float:
    """(1/d) sum_i Tr(M_i^2), in (0, 1].

    Equals 1 exactly when the measurement is projective and 1/d for the
    trivial uniform POVM {I/d}.  Effects are Hermitian, so Tr(M^2) is the
    squared Frobenius norm; no matrix squaring needed.
    """
    d = povm.dim
    return float(sum(np.sum(np.abs(m) ** 2) for m in povm.effects)) / d


def projective_instrument(u: UnitaryMatrix) -> Instrument:
    """The rank-1 projective instrument {U|i><i|U†} for a basis unitary U."""
    cols = u.matrix.T
    return Instrument(tuple(np.outer(c, c.conj()) for c in cols))


# ---------------------------------------------------------------------------
# Devices
# ---------------------------------------------------------------------------

class DeviceKind(Enum):
    CLASSICAL_UNIFORM = "classical-uniform"
    PROJECTIVE_HAAR = "projective-haar"
    CUSTOM = "custom"


class Access(Enum):
    CLASSICAL_ONLY = "classical-only"
    WITH_POST_STATE = "with-post-state"


class Backend(Enum):
    DENSE = "dense"
    FAST = "fast"


@dataclass(frozen=True)
class FixedPure:
    """Query-input descriptor: the computational basis state |index>."""

    index: int = 0


@dataclass(frozen=True)
class MaximallyMixed:
    """Query-input descriptor: the state I/d."""


@dataclass(frozen=True)
class PostStateOf:
    """Query-input descriptor: the post-state of a previous outcome."""

    index: int


@dataclass(frozen=True, eq=False)
class MeasurementOutcome:
    """One query result: the outcome index, plus the post-state when granted."""

    index: int
    post_state: DensityState | None = None


@dataclass(eq=False)
class Device:
    """A queryable measurement black box.  Build via the factory functions."""

    dim: int
    kind: DeviceKind
    access: Access
    backend: Backend
    unitary: UnitaryMatrix | None = None
    instrument: Instrument | None = None
    # Outcome amplitudes <i|U†|0> for the fixed |0> input; |amps|^2 is the
    # outcome law.  This is all the fast backend stores about the basis.
    fixed_input_amps: np.ndarray | None = None
    _cdf: np.ndarray | None = field(default=None, repr=False)
    _effects: tuple[np.ndarray, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        require_dim(self.dim)
        if self.kind is DeviceKind.PROJECTIVE_HAAR:
            if self.unitary is None and self.fixed_input_amps is None:
                raise ValueError("projective device needs a unitary or cached amplitudes")
            if self.unitary is not None and self.unitary.dim != self.dim:
                raise ShapeError("unitary dimension does not match device dimension")
        if self.kind is DeviceKind.CUSTOM:
            if self.instrument is None:
                raise ValueError("custom device needs an instrument")
            if self.instrument.dim != self.dim:
                raise ShapeError("instrument dimension does not match device dimension")
            if self.backend is Backend.FAST:
                raise UnsupportedBackendError(
                    "fast backend supports only classical-uniform and projective devices"
                )

    # -- dense semantics ----------------------------------------------------

    def outcome_probs(self, rho: np.ndarray) -> np.ndarray:
        """Born probabilities for a density matrix input (dense path)."""
        rho = np.asarray(rho)
        if rho.shape != (self.dim, self.dim):
            raise ShapeError(
                f"input state has shape {rho.shape}, device dimension is {self.dim}"
            )
        if self.kind is DeviceKind.CLASSICAL_UNIFORM:
            return np.full(self.dim, 1.0 / self.dim)
        if self.kind is DeviceKind.PROJECTIVE_HAAR:
            u = self._require_unitary()
            probs = np.einsum("ji,jk,ki->i", u.conj(), rho, u).real
        else:
            probs = np.array(
                [np.trace(rho @ m).real for m in self._povm_effects()]
            )
        probs = np.clip(probs, 0.0, None)
        return probs / probs.sum()

    def post_density(self, index: int, rho: np.ndarray) -> np.ndarray:
        """Post-measurement density matrix for outcome ``index`` (dense path)."""
        if self.kind is DeviceKind.CLASSICAL_UNIFORM:
            return np.asarray(rho)
        if self.kind is DeviceKind.PROJECTIVE_HAAR:
            col = self._require_unitary()[:, index]
            return np.outer(col, col.conj())
        k = self.instrument.kraus[index]
        out = k @ rho @ k.conj().T
        return out / np.trace(out).real

    def query(self, state: DensityState, rng: RngStream) -> MeasurementOutcome:
        """Sample one outcome by the Born rule; attach the post-state if granted.

        Classical devices return the input unchanged as the post-state; the
        other kinds collapse it.  Outcomes are sampled, never postselected,
        so zero-probability conditioning cannot occur.
        """
        if state.dim != self.dim:
            raise ShapeError(
                f"input state dimension {state.dim} != device dimension {self.dim}"
            )
        probs = self.outcome_probs(state.matrix)
        index = int(rng.generator.choice(len(probs), p=probs))
        if self.access is not Access.WITH_POST_STATE:
            return MeasurementOutcome(index=index)
        if self.kind is DeviceKind.CLASSICAL_UNIFORM:
            return MeasurementOutcome(index=index, post_state=state)
        post = DensityState(self.post_density(index, state.matrix))
        return MeasurementOutcome(index=index, post_state=post)

    def base_probs(self) -> np.ndarray:
        """First-query outcome law on the input I/d: p_i = Tr(M_i)/d."""
        if self.kind is DeviceKind.CUSTOM:
            return np.array([np.trace(m).real / self.dim for m in self._povm_effects()])
        return np.full(self.dim, 1.0 / self.dim)

    def repeat_transition(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact two-step chain for input I/d.

        Returns ``(p, T)`` where ``p[i]`` is the first-outcome probability
        and ``T[i, j]`` the probability of outcome j when the same device
        measures the post-state of outcome i.  Requires post-state access.
        """
        self._require_post_state()
        p = self.base_probs()
        if self.kind is DeviceKind.CLASSICAL_UNIFORM:
            return p, np.full((self.dim, self.dim), 1.0 / self.dim)
        if self.kind is DeviceKind.PROJECTIVE_HAAR:
            return p, np.eye(self.dim)
        n = self.instrument.n_outcomes
        t = np.empty((n, n))
        mixed = np.eye(self.dim, dtype=complex) / self.dim
        for i in range(n):
            t[i] = self.outcome_probs(self.post_density(i, mixed))
        return p, t

    # -- fast semantics -----------------------------------------------------

    def sample_fixed_input(self, n: int, rng: RngStream) -> np.ndarray:
        """n independent outcome indices for fresh |0><0| inputs (fast path)."""
        if self.backend is not Backend.FAST:
            raise UnsupportedBackendError("batched fixed-input sampling needs the fast backend")
        g = rng.generator
        if self.kind is DeviceKind.CLASSICAL_UNIFORM:
            return g.integers(0, self.dim, size=n)
        cdf = self._fixed_input_cdf()
        return np.searchsorted(cdf, g.random(n), side="right")

    def query_fast(self, descriptor, rng: RngStream) -> int:
        """One outcome index for a descriptor-specified input (fast path).

        Agrees with the dense Born semantics: a classical device is uniform
        for every input; a projective device is uniform on I/d, reproduces a
        previous outcome with certainty, and samples the cached |<i|U†|0>|^2
        table for the fixed |0> input.
        """
        if self.backend is not Backend.FAST:
            raise UnsupportedBackendError("query_fast requires the fast backend")
        g = rng.generator
        if self.kind is DeviceKind.CLASSICAL_UNIFORM:
            return int(g.integers(0, self.dim))
        if isinstance(descriptor, MaximallyMixed):
            return int(g.integers(0, self.dim))
        if isinstance(descriptor, PostStateOf):
            self._require_post_state()
            if not 0 <= descriptor.index < self.dim:
                raise ValueError(f"outcome index {descriptor.index} out of range")
            return descriptor.index
        if isinstance(descriptor, FixedPure):
            if descriptor.index == 0:
                cdf = self._fixed_input_cdf()
                return int(np.searchsorted(cdf, g.random(), side="right"))
            if self.unitary is not None:
                probs = np.abs(self.unitary.matrix[descriptor.index, :]) ** 2
                return int(g.choice(self.dim, p=probs / probs.sum()))
            raise UnsupportedBackendError(
                "fast projective device caches only the |0> input table"
            )
        raise UnsupportedBackendError(f"unsupported input descriptor {descriptor!r}")

    # -- internals ----------------------------------------------------------

    def _require_unitary(self) -> np.ndarray:
        if self.unitary is None:
            raise UnsupportedBackendError(
                "dense query requires a materialized unitary; this device was "
                "built fast-only"
            )
        return self.unitary.matrix

    def _require_post_state(self) -> None:
        if self.access is not Access.WITH_POST_STATE:
            raise AccessError("device access mode does not grant post-measurement states")

    def _povm_effects(self) -> tuple[np.ndarray, ...]:
        if self._effects is None:
            self._effects = povm_of(self.instrument).effects
        return self._effects

    def _fixed_input_cdf(self) -> np.ndarray:
        if self._cdf is None:
            if self.fixed_input_amps is not None:
                probs = np.abs(self.fixed_input_amps) ** 2
            else:
                # <i|U†|0> = conj(U[0, i]); the |0>-input outcome law is the
                # squared magnitude of the unitary's first row.
                probs = np.abs(self._require_unitary()[0, :]) ** 2
            cdf = np.cumsum(probs / probs.sum())
            cdf[-1] = 1.0
            self._cdf = cdf
        return self._cdf


# ---------------------------------------------------------------------------
# Device factories
# ---------------------------------------------------------------------------

def classical_device(
    d: int,
    access: Access = Access.CLASSICAL_ONLY,
    backend: Backend = Backend.FAST,
) -> Device:
    """A uniform classical random number generator over d outcomes."""
    return Device(dim=require_dim(d), kind=DeviceKind.CLASSICAL_UNIFORM,
                  access=access, backend=backend)


def projective_haar_device(
    d: int,
    rng: RngStream | None = None,
    *,
    unitary: UnitaryMatrix | None = None,
    access: Access = Access.CLASSICAL_ONLY,
    backend: Backend = Backend.FAST,
) -> Device:
    """A projective measurement in a Haar-random (or injected) basis.

    With the fast backend and no injected unitary, only the |0>-input
    outcome amplitudes are sampled and stored (d complex numbers), so large
    dimensions never allocate a d x d matrix.
    """
    d = require_dim(d)
    if unitary is not None:
        amps = unitary.matrix[0, :].conj()
        return Device(dim=d, kind=DeviceKind.PROJECTIVE_HAAR, access=access,
                      backend=backend, unitary=unitary, fixed_input_amps=amps)
    if rng is None:
        raise ValueError("projective_haar_device needs an RngStream when no unitary is injected")
    if backend is Backend.FAST:
        state = sample_haar_state(d, rng)
        return Device(dim=d, kind=DeviceKind.PROJECTIVE_HAAR, access=access,
                      backend=backend, fixed_input_amps=state.amplitudes)
    u = sample_haar_unitary(d, rng)
    return Device(dim=d, kind=DeviceKind.PROJECTIVE_HAAR, access=access,
                  backend=backend, unitary=u, fixed_input_amps=u.matrix[0, :].conj())


def custom_device(
    instrument: Instrument,
    access: Access = Access.WITH_POST_STATE,
) -> Device:
    """A device implementing a caller-supplied instrument (dense only)."""
    return Device(dim=instrument.dim, kind=DeviceKind.CUSTOM, access=access,
                  backend=Backend.DENSE, instrument=instrument)


def random_hypothesis_device(
    d: int,
    rng: RngStream,
    access: Access = Access.CLASSICAL_ONLY,
    backend: Backend = Backend.FAST,
) -> Device:
    """Draw one of the two hypotheses with equal prior probability.

    Heads: a classical uniform device.  Tails: a projective measurement in a
    fresh Haar-random basis.  The device's ``kind`` is the ground truth.
    """
    if rng.generator.integers(0, 2) == 0:
        return classical_device(d, access=access, backend=backend)
    return projective_haar_device(d, rng, access=access, backend=backend)


# ---------------------------------------------------------------------------
# Operator file format
# ---------------------------------------------------------------------------

def _operator_to_json(m: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def _operator_from_json(rows, d: int, which: int) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.shape != (d, d, 2):
        raise ValueError(
            f"operator {which} must be a {d}x{d} array of [re, im] pairs, "
            f"got shape {arr.shape}"
        )
    return arr[..., 0] + 1j * arr[..., 1]


def operators_to_json(obj: Povm | Instrument) -> str:
    """Serialize a POVM or instrument to the interchange JSON document."""
    if isinstance(obj, Povm):
        kind, ops = "povm", obj.effects
    elif isinstance(obj, Instrument):
        kind, ops = "instrument", obj.kraus
    else:
        raise TypeError(f"expected Povm or Instrument, got {type(obj).__name__}")
    doc = {"d": obj.dim, "kind": kind, "operators": [_operator_to_json(m) for m in ops]}
    return json.dumps(doc)


def operators_from_json(text: str) -> Povm | Instrument:
    """Parse the interchange JSON document, reporting the first violation."""
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("operator document must be a JSON object")
    for key in ("d", "kind", "operators"):
        if key not in doc:
            raise ValueError(f"operator document is missing the '{key}' field")
    d = require_dim(doc["d"])
    kind = doc["kind"]
    if kind not in ("povm", "instrument"):
        raise ValueError(f"kind must be 'povm' or 'instrument', got {kind!r}")
    ops = [
        _operator_from_json(rows, d, i) for i, rows in enumerate(doc["operators"])
    ]
    if kind == "povm":
        povm = Povm(tuple(ops))
        povm.validate_psd()
        return povm
    return Instrument(tuple(ops))


def load_operator_file(path) -> Povm | Instrument:
    with open(path, "r", encoding="utf-8") as fh:
        return operators_from_json(fh.read())
