"""Finite-dimensional Hilbert space primitives.

Everything downstream (trajectories, ensembles, energy bookkeeping) is
built on three immutable value types defined here -- ``StateVector``,
``HermitianOperator`` and ``Spectrum`` -- plus a handful of pure
operations on them.  Matrix functions of Hermitian operators are always
evaluated through an eigendecomposition; no series expansions or
splittings are used at this level, so the only error source is the
eigensolver itself.

Determinism contract: the eigendecomposition orders eigenvalues
ascending and fixes each eigenvector's global phase by making its first
significant component real and positive.  Repeated calls on the same
matrix therefore return bit-identical results, which the reproducibility
guarantees of the ensemble layer rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tolerances
from .errors import NonHermitianError, RangeOverflowError, ZeroNormError

# Largest exponent handed to np.exp before we call the result an overflow.
_EXP_LIMIT = 700.0

# Components smaller than this (relative to the largest one) are not used
# for phase fixing; their angle is numerical noise.
_PHASE_FLOOR = 1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class StateVector:
    """A ket with complex amplitudes.

    The amplitudes are stored as an immutable complex128 array.  A state
    with exactly zero norm is legal to construct (it can arise as the
    limit of strong collapse suppression) but is flagged as degenerate;
    operations that need a direction through it raise ``ZeroNormError``.
    States are never normalized behind the caller's back.
    """

    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("state amplitudes must be a non-empty 1-d array")
        if not np.isfinite(a).all():
            raise ValueError("state amplitudes must be finite")
        object.__setattr__(self, "amplitudes", _readonly(a))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def norm2(self) -> float:
        return float(np.real(np.vdot(self.amplitudes, self.amplitudes)))

    @property
    def is_degenerate(self) -> bool:
        """True when the state carries no direction (zero norm)."""
        return self.norm2 == 0.0

    def normalized(self) -> "StateVector":
        n2 = self.norm2
        if n2 == 0.0:
            raise ZeroNormError("cannot normalize a zero-norm state")
        return StateVector(self.amplitudes / np.sqrt(n2))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigendecomposition of a Hermitian operator.

    ``eigenvalues`` are real and ascending; column ``j`` of
    ``eigenvectors`` belongs to ``eigenvalues[j]`` and has its first
    significant component real and positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _readonly(np.asarray(self.eigenvalues, dtype=float)))
        object.__setattr__(self, "eigenvectors", _readonly(np.asarray(self.eigenvectors, dtype=np.complex128)))

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def reconstruct(self) -> np.ndarray:
        """Return V diag(w) V^dag, the matrix this spectrum came from."""
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def apply_function(self, values: np.ndarray) -> np.ndarray:
        """Return V diag(values) V^dag for per-eigenvalue ``values``."""
        v = self.eigenvectors
        return (v * np.asarray(values)) @ v.conj().T


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """A self-adjoint matrix, validated on construction.

    The hermiticity check is relative: max |M - M^dag| must not exceed
    ``tolerances.CONSTRUCTION`` times max |M| (with an absolute fallback
    for the zero matrix).  The spectrum is computed once on first use and
    cached; recomputation would return the identical object, so the cache
    is safe under concurrent access.
    """

    matrix: np.ndarray
    _cache: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError("operator must be a square non-empty matrix")
        if not np.isfinite(m).all():
            raise ValueError("operator entries must be finite")
        scale = float(np.max(np.abs(m)))
        tol = tolerances.CONSTRUCTION * max(scale, 1.0)
        asym = float(np.max(np.abs(m - m.conj().T)))
        if asym > tol:
            raise NonHermitianError(asym, tol)
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def spectrum(self) -> Spectrum:
        if not self._cache:
            self._cache.append(eigendecompose(self))
        return self._cache[0]

    def spectral_range(self) -> float:
        w = self.spectrum().eigenvalues
        return float(w[-1] - w[0])


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its first significant component is real positive."""
    v = np.array(vectors)
    mags = np.abs(v)
    for j in range(v.shape[1]):
        col = mags[:, j]
        idx = np.argmax(col > _PHASE_FLOOR * col.max())
        pivot = v[idx, j]
        if pivot != 0:
            v[:, j] *= np.conj(pivot) / abs(pivot)
    return v


def eigendecompose(op: HermitianOperator) -> Spectrum:
    """Eigendecomposition with the deterministic ordering/phase contract.

    Parameters
    ----------
    op : HermitianOperator

    Returns
    -------
    Spectrum
        Ascending eigenvalues; orthonormal eigenvectors with fixed phases.
    """
    w, v = np.linalg.eigh(op.matrix)
    return Spectrum(w, _fix_phases(v))


def herm_exp(op: HermitianOperator, scale: complex) -> np.ndarray:
    """Matrix exponential exp(scale * op) of a Hermitian operator.

    Evaluated through the eigendecomposition, so a purely imaginary
    ``scale`` yields a unitary matrix to working precision.  If the real
    part of ``scale * eigenvalue`` exceeds the float64 exponent range the
    call fails with ``RangeOverflowError`` rather than returning inf.
    """
    spec = op.spectrum()
    z = complex(scale) * spec.eigenvalues
    worst = float(np.max(z.real))
    if worst > _EXP_LIMIT:
        raise RangeOverflowError(
            f"herm_exp exponent {worst:.1f} exceeds float64 range "
            f"(scale={scale!r}, eigenvalue range "
            f"[{spec.eigenvalues[0]:.3g}, {spec.eigenvalues[-1]:.3g}])",
            exponent=worst,
        )
    return spec.apply_function(np.exp(z))


def interaction_picture(a: HermitianOperator, h: HermitianOperator, t: float) -> HermitianOperator:
    """Conjugate ``a`` by the propagator of ``h``: exp(iht) a exp(-iht).

    This is the Heisenberg-rotated observable used throughout the
    trajectory layer.  The rotation is unitary, so the spectrum of the
    result equals the spectrum of ``a``.
    """
    if a.dim != h.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {h.dim}")
    if t == 0.0:
        return a
    spec = h.spectrum()
    u = spec.eigenvectors * np.exp(1j * spec.eigenvalues * t)
    rotated = u @ (spec.eigenvectors.conj().T @ a.matrix @ spec.eigenvectors) @ u.conj().T
    # Conjugation is Hermitian up to rounding; symmetrize the dust so the
    # constructor's check reflects a real defect, not accumulated noise.
    rotated = 0.5 * (rotated + rotated.conj().T)
    return HermitianOperator(rotated)


def double_commutator(a: HermitianOperator, b: HermitianOperator) -> HermitianOperator:
    """[a, [a, b]] for Hermitian a, b (itself Hermitian)."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    inner = a.matrix @ b.matrix - b.matrix @ a.matrix
    outer = a.matrix @ inner - inner @ a.matrix
    outer = 0.5 * (outer + outer.conj().T)
    return HermitianOperator(outer)


def expectation(op: HermitianOperator, psi: StateVector) -> float:
    """Normalized expectation value <psi|op|psi> / <psi|psi>.

    The result of the quadratic form is real up to rounding; the
    imaginary residue is checked against ``tolerances.ALGEBRA`` (scaled)
    and then discarded.  A zero-norm state is rejected.
    """
    if op.dim != psi.dim:
        raise ValueError(f"dimension mismatch: {op.dim} vs {psi.dim}")
    n2 = psi.norm2
    if n2 == 0.0:
        raise ZeroNormError("expectation value of a zero-norm state is undefined")
    raw = np.vdot(psi.amplitudes, op.matrix @ psi.amplitudes) / n2
    scale = max(abs(raw), float(np.max(np.abs(op.matrix))), 1.0)
    if abs(raw.imag) > tolerances.ALGEBRA * scale:
        raise NonHermitianError(abs(raw.imag), tolerances.ALGEBRA * scale)
    return float(raw.real)


def variance(op: HermitianOperator, psi: StateVector) -> float:
    """Normalized variance <op^2> - <op>^2 (clipped at zero)."""
    mean = expectation(op, psi)
    second = HermitianOperator(op.matrix @ op.matrix)
    return max(expectation(second, psi) - mean * mean, 0.0)
