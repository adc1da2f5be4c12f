"""Random-matrix and spectral primitives.

GUE and Haar sampling, a Hermitian eigendecomposition wrapper, dephasing
maps (infinite-time averages), state distances and the closed-form Haar
column moment used by the ensemble-average formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from finmeas.errors import (
    DegenerateSpectrumError,
    InvalidDimensionError,
    NumericInputError,
    ShapeError,
)

# Relative gap (in units of the spectral radius) below which a spectrum is
# treated as degenerate.
DEGENERACY_RTOL = 1e-9

StreamKey = Union[int, Sequence[int]]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by ``(seed, stream)``.

    Streams are derived through :class:`numpy.random.SeedSequence` spawn keys,
    so the sequence of a given stream does not depend on which other streams
    were drawn before it, or in which order.

    >>> a = RngStream(7, 3).generator().standard_normal()
    >>> b = RngStream(7, 3).generator().standard_normal()
    >>> a == b
    True
    """

    seed: int
    stream: tuple[int, ...] = ()

    def __init__(self, seed: int, stream: StreamKey = ()):
        if isinstance(stream, (int, np.integer)):
            stream = (int(stream),)
        key = tuple(int(s) for s in stream)
        if any(s < 0 for s in key) or int(seed) < 0:
            raise ValueError("seed and stream indices must be non-negative")
        object.__setattr__(self, "seed", int(seed))
        object.__setattr__(self, "stream", key)

    def child(self, *index: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(index))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng.generator()


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending) and eigenvector columns of a Hermitian matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues))) if self.dim else 0.0

    @property
    def min_gap(self) -> float:
        if self.dim < 2:
            return np.inf
        return float(np.min(np.diff(self.eigenvalues)))

    def degeneracy_tol(self, rtol: float = DEGENERACY_RTOL) -> float:
        return rtol * max(self.spectral_radius, np.finfo(float).tiny)

    def is_degenerate(self, rtol: float = DEGENERACY_RTOL) -> bool:
        return self.min_gap <= self.degeneracy_tol(rtol)

    def check_nondegenerate(self, rtol: float = DEGENERACY_RTOL) -> None:
        if self.is_degenerate(rtol):
            raise DegenerateSpectrumError(self.min_gap, self.degeneracy_tol(rtol))

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T

    def propagator(self, t: float) -> np.ndarray:
        """``exp(-i H t)`` built from the cached spectrum."""
        u = self.eigenvectors
        return (u * np.exp(-1j * self.eigenvalues * t)) @ u.conj().T


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Dense complex self-adjoint matrix with a lazily cached spectrum."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {m.shape}")
        if m.shape[0] == 0:
            raise InvalidDimensionError("dimension must be >= 1")
        m = np.array(m, dtype=complex)
        if not np.array_equal(m, m.conj().T):
            raise ValueError("matrix is not exactly Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "HermitianOperator":
        """Symmetrize ``m`` as (m + m^H)/2 before wrapping."""
        m = np.asarray(m, dtype=complex)
        return cls(0.5 * (m + m.conj().T))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def spectrum(self) -> SpectralDecomposition:
        return eig(self)

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        return HermitianOperator(self.matrix + other.matrix)

    def scaled(self, factor: float) -> "HermitianOperator":
        return HermitianOperator(float(factor) * self.matrix)


def _check_dim(dim: int) -> int:
    if int(dim) != dim or dim < 1:
        raise InvalidDimensionError(f"dimension must be a positive integer, got {dim!r}")
    return int(dim)


def sample_gue(dim: int, rng: RngStream | np.random.Generator) -> HermitianOperator:
    """Draw a GUE matrix.

    Off-diagonal entries have independent real and imaginary parts with
    standard deviation 1; diagonal entries are real with standard deviation
    sqrt(2). This makes the ensemble invariant under unitary conjugation.
    """
    dim = _check_dim(dim)
    gen = _as_generator(rng)
    a = gen.standard_normal((dim, dim)) + 1j * gen.standard_normal((dim, dim))
    # a + a^H is exactly Hermitian elementwise in floating point
    return HermitianOperator((a + a.conj().T) / np.sqrt(2.0))


def sample_haar_state(dim: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    dim = _check_dim(dim)
    gen = _as_generator(rng)
    v = gen.standard_normal(dim) + 1j * gen.standard_normal(dim)
    return v / np.linalg.norm(v)


def sample_haar_states(dim: int, count: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """``count`` Haar-random unit vectors as rows of a ``(count, dim)`` array."""
    dim = _check_dim(dim)
    gen = _as_generator(rng)
    v = gen.standard_normal((count, dim)) + 1j * gen.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_haar_unitaries(dim: int, count: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Stack of Haar unitaries via QR of Ginibre matrices with the phase fix."""
    dim = _check_dim(dim)
    gen = _as_generator(rng)
    z = gen.standard_normal((count, dim, dim)) + 1j * gen.standard_normal((count, dim, dim))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=1, axis2=2)
    return q * (d / np.abs(d))[:, None, :]


def eig(h: HermitianOperator | np.ndarray) -> SpectralDecomposition:
    m = h.matrix if isinstance(h, HermitianOperator) else np.asarray(h)
    if not np.all(np.isfinite(m)):
        raise NumericInputError("matrix has non-finite entries")
    w, u = np.linalg.eigh(m)
    return SpectralDecomposition(w, u)


def _spectrum_of(spec) -> SpectralDecomposition:
    if isinstance(spec, HermitianOperator):
        return spec.spectrum
    return spec


def dephase(rho: np.ndarray, spec: SpectralDecomposition | HermitianOperator,
            rtol: float = DEGENERACY_RTOL) -> np.ndarray:
    """Project ``rho`` onto the commutant of H: sum_m P_m rho P_m.

    For a nondegenerate spectrum this equals the infinite-time average of
    exp(-iHt) rho exp(iHt).
    """
    spec = _spectrum_of(spec)
    rho = np.asarray(rho)
    if rho.shape != (spec.dim, spec.dim):
        raise ShapeError(f"rho shape {rho.shape} does not match spectrum dim {spec.dim}")
    spec.check_nondegenerate(rtol)
    u = spec.eigenvectors
    pops = np.einsum("ij,ik,kj->j", u.conj(), rho, u)
    return (u * pops) @ u.conj().T


def cross_dephase(x: np.ndarray, spec_a, spec_b, tol: float | None = None):
    """Time average of exp(-iH_a t) X exp(iH_b t).

    Only pairs of levels with |w_a - w_b| <= ``tol`` survive. Returns the
    averaged matrix and the number of such coincident pairs; for unrelated
    generic spectra that count is zero and the result vanishes.
    """
    spec_a = _spectrum_of(spec_a)
    spec_b = _spectrum_of(spec_b)
    x = np.asarray(x)
    if x.shape != (spec_a.dim, spec_b.dim):
        raise ShapeError(f"X shape {x.shape} does not match ({spec_a.dim}, {spec_b.dim})")
    if tol is None:
        tol = DEGENERACY_RTOL * max(spec_a.spectral_radius, spec_b.spectral_radius)
    mask = np.abs(spec_a.eigenvalues[:, None] - spec_b.eigenvalues[None, :]) <= tol
    count = int(mask.sum())
    if count == 0:
        return np.zeros_like(x, dtype=complex), 0
    ua, ub = spec_a.eigenvectors, spec_b.eigenvectors
    inner = ua.conj().T @ x @ ub
    return ua @ (inner * mask) @ ub.conj().T, count


def _check_pair(rho, sigma):
    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    if rho.shape != sigma.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"incompatible shapes {rho.shape} and {sigma.shape}")
    return rho, sigma


def trace_distance(rho, sigma) -> float:
    """Half the trace norm of ``rho - sigma`` (both Hermitian)."""
    rho, sigma = _check_pair(rho, sigma)
    delta = rho - sigma
    delta = 0.5 * (delta + delta.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(delta))))


def frobenius_distance(rho, sigma) -> float:
    rho, sigma = _check_pair(rho, sigma)
    return float(np.linalg.norm(rho - sigma))


def haar_column_fourth_moment_exact(d: int, i1: int, i2: int, i3: int, i4: int) -> Fraction:
    """Exact value of the Haar integral of U[i1,1] U[i2,1] U*[i3,1] U*[i4,1].

    Indices are 1-based, matching the usual matrix-element notation.
    """
    d = _check_dim(d)
    for i in (i1, i2, i3, i4):
        if not 1 <= i <= d:
            raise IndexError(f"index {i} out of range 1..{d}")
    hits = int(i1 == i3 and i2 == i4) + int(i1 == i4 and i2 == i3)
    return Fraction(hits, d * (d + 1))


def haar_column_fourth_moment(d: int, i1: int, i2: int, i3: int, i4: int) -> float:
    return float(haar_column_fourth_moment_exact(d, i1, i2, i3, i4))
