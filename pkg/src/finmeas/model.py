"""Sector geometry, Hamiltonian blocks, initial state and outcome projectors.

The apparatus basis is ordered by magnetization sector as
``(H_{+1}, H_0, H_{-1})`` with sizes ``(d1, d0, d1)``. The spin-up part of
the Hamiltonian lives on ``S+ = H_{+1} + H_0`` (apparatus indices
``[0, d1 + d0)``), the spin-down part on ``S- = H_0 + H_{-1}`` (indices
``[d1, 2**N)``). States are kept as three ``(d0+d1) x (d0+d1)`` blocks:

* ``bpp``: the ``|+><+|`` component restricted to S+,
* ``bmm``: the ``|-><-|`` component restricted to S-,
* ``bpm``: the ``|+><-|`` coherence, rows in S+ and columns in S-.

Nothing ever populates ``|+> (x) H_{-1}`` or ``|-> (x) H_{+1}``, so the
blocks carry the whole state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import comb

import numpy as np

from finmeas.errors import InvalidParameterError, ShapeError
from finmeas.rmt import HermitianOperator, RngStream, sample_gue

MAX_N = 16


@dataclass(frozen=True)
class ApparatusLayout:
    N: int
    d0: int
    d1: int

    @property
    def dim(self) -> int:
        """Apparatus Hilbert-space dimension 2**N."""
        return 2 ** self.N

    @property
    def block_dim(self) -> int:
        return self.d0 + self.d1

    @property
    def plus_slice(self) -> slice:
        """Apparatus indices of S+."""
        return slice(0, self.d1 + self.d0)

    @property
    def minus_slice(self) -> slice:
        """Apparatus indices of S-."""
        return slice(self.d1, self.dim)

    # sector positions inside the S+ / S- block coordinates
    @property
    def up_in_plus(self) -> slice:
        return slice(0, self.d1)

    @property
    def zero_in_plus(self) -> slice:
        return slice(self.d1, self.d1 + self.d0)

    @property
    def zero_in_minus(self) -> slice:
        return slice(0, self.d0)

    @property
    def down_in_minus(self) -> slice:
        return slice(self.d0, self.d0 + self.d1)


def make_layout(N: int, max_n: int = MAX_N) -> ApparatusLayout:
    if int(N) != N or N < 2 or N % 2 or N > max_n:
        raise InvalidParameterError(f"N must be even with 2 <= N <= {max_n}, got {N!r}")
    N = int(N)
    d0 = comb(N, N // 2)
    return ApparatusLayout(N=N, d0=d0, d1=(2 ** N - d0) // 2)


@dataclass(frozen=True)
class SpinState:
    c_plus: complex
    c_minus: complex

    def __post_init__(self):
        object.__setattr__(self, "c_plus", complex(self.c_plus))
        object.__setattr__(self, "c_minus", complex(self.c_minus))
        norm = abs(self.c_plus) ** 2 + abs(self.c_minus) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise InvalidParameterError(f"spin amplitudes not normalized: |c+|^2+|c-|^2 = {norm!r}")

    @classmethod
    def normalized(cls, c_plus: complex, c_minus: complex, warn_tol: float = 1e-6) -> "SpinState":
        """Rescale amplitudes to unit norm, warning if they were off by more than ``warn_tol``."""
        c_plus, c_minus = complex(c_plus), complex(c_minus)
        norm2 = abs(c_plus) ** 2 + abs(c_minus) ** 2
        if norm2 == 0:
            raise InvalidParameterError("spin amplitudes are both zero")
        if abs(norm2 - 1.0) <= 1e-12:
            # already valid; rescaling would perturb the last bits and break replays
            return cls(c_plus, c_minus)
        if abs(norm2 - 1.0) > warn_tol:
            warnings.warn(f"spin amplitudes renormalized (norm^2 was {norm2:.6g})", stacklevel=2)
        s = np.sqrt(norm2)
        return cls(c_plus / s, c_minus / s)

    @property
    def w_plus(self) -> float:
        return abs(self.c_plus) ** 2

    @property
    def w_minus(self) -> float:
        return abs(self.c_minus) ** 2

    def weight(self, outcome: int) -> float:
        if outcome == 1:
            return self.w_plus
        if outcome == -1:
            return self.w_minus
        raise InvalidParameterError(f"outcome must be +1 or -1, got {outcome!r}")


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    layout: ApparatusLayout
    spin: SpinState
    h_plus_block: HermitianOperator
    h_minus_block: HermitianOperator
    epsilon: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise InvalidParameterError(f"epsilon must be >= 0, got {self.epsilon!r}")
        for h in (self.h_plus_block, self.h_minus_block):
            if h.dim != self.layout.block_dim:
                raise ShapeError(f"block dim {h.dim} != d0+d1 = {self.layout.block_dim}")

    def with_epsilon(self, epsilon: float) -> "MeasurementModel":
        return MeasurementModel(self.layout, self.spin, self.h_plus_block, self.h_minus_block, epsilon)


@dataclass(frozen=True, eq=False)
class PerturbationV:
    v_plus_block: HermitianOperator
    v_minus_block: HermitianOperator


def build_model(N: int, spin: SpinState, epsilon: float, rng: RngStream | np.random.Generator,
                max_n: int = MAX_N) -> MeasurementModel:
    """Sample the bare blocks H_[+1,0] and H_[0,-1] once; they stay fixed."""
    layout = make_layout(N, max_n)
    gen = rng if isinstance(rng, np.random.Generator) else rng.generator()
    h_plus = sample_gue(layout.block_dim, gen)
    h_minus = sample_gue(layout.block_dim, gen)
    return MeasurementModel(layout, spin, h_plus, h_minus, float(epsilon))


def sample_perturbation(model: MeasurementModel, rng: RngStream | np.random.Generator) -> PerturbationV:
    gen = rng if isinstance(rng, np.random.Generator) else rng.generator()
    dim = model.layout.block_dim
    return PerturbationV(sample_gue(dim, gen), sample_gue(dim, gen))


@dataclass(frozen=True, eq=False)
class JointState:
    """Block representation of the spin (x) apparatus density operator."""

    bpp: np.ndarray
    bmm: np.ndarray
    bpm: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.bpp), np.shape(self.bmm), np.shape(self.bpm)}
        if len(shapes) != 1:
            raise ShapeError(f"block shapes differ: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ShapeError(f"blocks must be square, got {shape}")

    @property
    def block_dim(self) -> int:
        return self.bpp.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.bpp).real + np.trace(self.bmm).real)

    def compact(self) -> np.ndarray:
        """The state as a 2(d0+d1) square matrix on (|+> (x) S+) + (|-> (x) S-)."""
        return np.block([[self.bpp, self.bpm], [self.bpm.conj().T, self.bmm]])

    @classmethod
    def from_compact(cls, m: np.ndarray) -> "JointState":
        n = m.shape[0] // 2
        return cls(m[:n, :n].copy(), m[n:, n:].copy(), m[:n, n:].copy())

    def embed(self, layout: ApparatusLayout) -> np.ndarray:
        """Full ``2**(N+1)`` density matrix with spin as the leading tensor factor."""
        if self.block_dim != layout.block_dim:
            raise ShapeError("state does not match layout")
        a = layout.dim
        full = np.zeros((2 * a, 2 * a), dtype=complex)
        p = np.arange(a)[layout.plus_slice]
        m = a + np.arange(a)[layout.minus_slice]
        full[np.ix_(p, p)] = self.bpp
        full[np.ix_(m, m)] = self.bmm
        full[np.ix_(p, m)] = self.bpm
        full[np.ix_(m, p)] = self.bpm.conj().T
        return full

    @classmethod
    def from_full(cls, full: np.ndarray, layout: ApparatusLayout) -> "JointState":
        a = layout.dim
        if full.shape != (2 * a, 2 * a):
            raise ShapeError(f"expected shape {(2 * a, 2 * a)}, got {full.shape}")
        p = np.arange(a)[layout.plus_slice]
        m = a + np.arange(a)[layout.minus_slice]
        return cls(full[np.ix_(p, p)], full[np.ix_(m, m)], full[np.ix_(p, m)])

    def scaled(self, factor: complex) -> "JointState":
        return JointState(factor * self.bpp, factor * self.bmm, factor * self.bpm)

    def __add__(self, other: "JointState") -> "JointState":
        return JointState(self.bpp + other.bpp, self.bmm + other.bmm, self.bpm + other.bpm)

    def inner(self, other: "JointState") -> float:
        """Hilbert-Schmidt inner product tr(self . other) for Hermitian states."""
        v = (np.vdot(self.bpp, other.bpp) + np.vdot(self.bmm, other.bmm)
             + 2 * np.vdot(self.bpm, other.bpm))
        return float(v.real)


def initial_state(model: MeasurementModel) -> JointState:
    """Spin state (x) microcanonical apparatus state on H_0."""
    lay = model.layout
    n = lay.block_dim
    c_p, c_m = model.spin.c_plus, model.spin.c_minus
    p0 = np.zeros((n, n), dtype=complex)
    p0[lay.zero_in_plus, lay.zero_in_plus] = np.eye(lay.d0) / lay.d0
    m0 = np.zeros((n, n), dtype=complex)
    m0[lay.zero_in_minus, lay.zero_in_minus] = np.eye(lay.d0) / lay.d0
    x0 = np.zeros((n, n), dtype=complex)
    x0[lay.zero_in_plus, lay.zero_in_minus] = np.eye(lay.d0) / lay.d0
    return JointState(abs(c_p) ** 2 * p0, abs(c_m) ** 2 * m0, c_p * np.conj(c_m) * x0)


def outcome_probabilities(state: JointState, layout: ApparatusLayout) -> tuple[float, float, float]:
    """Born-rule probabilities of the +1, 0 and -1 apparatus sectors."""
    if state.block_dim != layout.block_dim:
        raise ShapeError("state does not match layout")
    bpp, bmm = state.bpp, state.bmm
    p_plus = np.trace(bpp[layout.up_in_plus, layout.up_in_plus]).real
    p_minus = np.trace(bmm[layout.down_in_minus, layout.down_in_minus]).real
    p_zero = (np.trace(bpp[layout.zero_in_plus, layout.zero_in_plus]).real
              + np.trace(bmm[layout.zero_in_minus, layout.zero_in_minus]).real)
    return float(p_plus), float(p_zero), float(p_minus)
