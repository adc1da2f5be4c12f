"""Exact time evolution, infinite-time averages and reversal for the model.

All propagators are built from cached eigendecompositions of the two
perturbed sector blocks ``h_plus + eps*v_plus`` and ``h_minus + eps*v_minus``
(hbar = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from finmeas.errors import (
    DegenerateSpectrumError,
    InvalidParameterError,
    NumericInputError,
    ShapeError,
)
from finmeas.model import (
    ApparatusLayout,
    JointState,
    MeasurementModel,
    PerturbationV,
    initial_state,
    outcome_probabilities,
    sample_perturbation,
)
from finmeas.rmt import (
    DEGENERACY_RTOL,
    RngStream,
    SpectralDecomposition,
    cross_dephase,
    dephase,
    eig,
    frobenius_distance,
    trace_distance,
)

# Consecutive degenerate draws tolerated before giving up.
MAX_RESAMPLES = 100


@dataclass(frozen=True, eq=False)
class EvolutionCache:
    spec_plus: SpectralDecomposition
    spec_minus: SpectralDecomposition
    layout: ApparatusLayout

    def propagators(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.spec_plus.propagator(t), self.spec_minus.propagator(t)


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray
    spacing: str = "logarithmic"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise InvalidParameterError("time grid must be a non-empty 1-d array")
        if not np.all(np.isfinite(pts)) or np.any(pts < 0):
            raise InvalidParameterError("time grid points must be finite and >= 0")
        if np.any(np.diff(pts) <= 0):
            raise InvalidParameterError("time grid must be strictly increasing")
        if self.spacing not in ("linear", "logarithmic"):
            raise InvalidParameterError(f"unknown spacing {self.spacing!r}")
        object.__setattr__(self, "points", pts)

    @classmethod
    def make(cls, tmin: float = 1e-3, tmax: float = 1e3, n: int = 200, log: bool = True) -> "TimeGrid":
        if log:
            if tmin <= 0:
                raise InvalidParameterError("logarithmic grid needs tmin > 0")
            return cls(np.geomspace(tmin, tmax, n), "logarithmic")
        return cls(np.linspace(tmin, tmax, n), "linear")

    def __len__(self) -> int:
        return self.points.size


def prepare(model: MeasurementModel, v: PerturbationV | None = None,
            rtol: float = DEGENERACY_RTOL) -> EvolutionCache:
    """Diagonalize both perturbed blocks; raise on a degenerate spectrum."""
    hp = model.h_plus_block.matrix
    hm = model.h_minus_block.matrix
    if v is not None and model.epsilon != 0:
        hp = hp + model.epsilon * v.v_plus_block.matrix
        hm = hm + model.epsilon * v.v_minus_block.matrix
    spec_p, spec_m = eig(hp), eig(hm)
    spec_p.check_nondegenerate(rtol)
    spec_m.check_nondegenerate(rtol)
    return EvolutionCache(spec_p, spec_m, model.layout)


def sample_cache(model: MeasurementModel, rng: RngStream | np.random.Generator,
                 rtol: float = DEGENERACY_RTOL) -> tuple[PerturbationV, EvolutionCache, int]:
    """Draw V until both perturbed blocks are nondegenerate.

    Returns the accepted perturbation, its cache and how many draws were rejected.
    """
    gen = rng if isinstance(rng, np.random.Generator) else rng.generator()
    for rejected in range(MAX_RESAMPLES):
        v = sample_perturbation(model, gen)
        try:
            return v, prepare(model, v, rtol), rejected
        except DegenerateSpectrumError:
            continue
    raise DegenerateSpectrumError(0.0, rtol)


def _check_time(t: float) -> float:
    t = float(t)
    if not np.isfinite(t):
        raise NumericInputError(f"time must be finite, got {t!r}")
    return t


def evolve(cache: EvolutionCache, state0: JointState, t: float) -> JointState:
    t = _check_time(t)
    if state0.block_dim != cache.layout.block_dim:
        raise ShapeError("state does not match cache")
    if t == 0:
        return state0
    up, um = cache.propagators(t)
    return JointState(
        up @ state0.bpp @ up.conj().T,
        um @ state0.bmm @ um.conj().T,
        up @ state0.bpm @ um.conj().T,
    )


class _EigenFrame:
    """A state rotated into the energy eigenbases, ready for repeated evolution."""

    def __init__(self, cache: EvolutionCache, state0: JointState):
        self.cache = cache
        qp = cache.spec_plus.eigenvectors
        qm = cache.spec_minus.eigenvectors
        self.qp, self.qm = qp, qm
        self.wp = cache.spec_plus.eigenvalues
        self.wm = cache.spec_minus.eigenvalues
        self.rpp = qp.conj().T @ state0.bpp @ qp
        self.rmm = qm.conj().T @ state0.bmm @ qm
        self.rpm = qp.conj().T @ state0.bpm @ qm

    def probabilities(self, times: np.ndarray) -> np.ndarray:
        """Outcome probabilities at each time, shape (len(times), 3)."""
        lay = self.cache.layout
        # Born weights tr(rho(t) Pi) = sum_jk r_jk Pi~_kj e^{-i(w_j - w_k)t}
        pi_up = self.qp[lay.up_in_plus].conj().T @ self.qp[lay.up_in_plus]
        pi_down = self.qm[lay.down_in_minus].conj().T @ self.qm[lay.down_in_minus]
        kp = self.rpp * pi_up.T
        km = self.rmm * pi_down.T
        ep = np.exp(-1j * np.outer(times, self.wp))
        em = np.exp(-1j * np.outer(times, self.wm))
        p_plus = np.einsum("tj,jk,tk->t", ep, kp, ep.conj()).real
        p_minus = np.einsum("tj,jk,tk->t", em, km, em.conj()).real
        total = np.trace(self.rpp).real + np.trace(self.rmm).real
        return np.column_stack([p_plus, total - p_plus - p_minus, p_minus])


def probability_timeseries(cache: EvolutionCache, state0: JointState,
                           grid: TimeGrid | np.ndarray) -> np.ndarray:
    """Rows of ``(t, p_plus, p_zero, p_minus)``."""
    times = grid.points if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    if not np.all(np.isfinite(times)):
        raise NumericInputError("non-finite time in grid")
    probs = _EigenFrame(cache, state0).probabilities(times)
    return np.column_stack([times, probs])


def time_averaged_state(cache: EvolutionCache, state0: JointState) -> JointState:
    bpp = dephase(state0.bpp, cache.spec_plus)
    bmm = dephase(state0.bmm, cache.spec_minus)
    bpm, _ = cross_dephase(state0.bpm, cache.spec_plus, cache.spec_minus)
    return JointState(bpp, bmm, bpm)


def equilibrium_probabilities(cache: EvolutionCache, state0: JointState) -> tuple[float, float, float]:
    return outcome_probabilities(time_averaged_state(cache, state0), cache.layout)


def effective_dimension(cache: EvolutionCache, state0: JointState) -> float:
    """Inverse of sum_i <E_i|rho0|E_i>^2 over the energy eigenbasis.

    Eigenvectors of the full Hamiltonian that carry weight are |+>(x)E+ and
    |->(x)E-; the zero-energy complement is not populated by rho0.
    """
    cache.spec_plus.check_nondegenerate()
    cache.spec_minus.check_nondegenerate()
    qp = cache.spec_plus.eigenvectors
    qm = cache.spec_minus.eigenvectors
    pops_p = np.einsum("ij,ik,kj->j", qp.conj(), state0.bpp, qp).real
    pops_m = np.einsum("ij,ik,kj->j", qm.conj(), state0.bmm, qm).real
    return 1.0 / float(np.sum(pops_p ** 2) + np.sum(pops_m ** 2))


def microcanonical_factors(cache: EvolutionCache, spin, times: np.ndarray) -> Iterator[np.ndarray]:
    """Yield ``Y(t)`` with ``rho(t) = Y Y^H / d0`` in compact coordinates.

    Valid for the product initial state (spin) (x) 1_0/d0; cheaper than
    :func:`evolve` because rho0 has rank d0.
    """
    lay = cache.layout
    qp, qm = cache.spec_plus.eigenvectors, cache.spec_minus.eigenvectors
    wp, wm = cache.spec_plus.eigenvalues, cache.spec_minus.eigenvalues
    # rows of Q^H belonging to H_0, i.e. columns of U(t) restricted to H_0
    ap = qp.conj().T[:, lay.zero_in_plus]
    am = qm.conj().T[:, lay.zero_in_minus]
    for t in times:
        t = _check_time(t)
        if t == 0:
            y0 = np.zeros((2 * lay.block_dim, lay.d0), dtype=complex)
            y0[:lay.block_dim][lay.zero_in_plus] = spin.c_plus * np.eye(lay.d0)
            y0[lay.block_dim:][lay.zero_in_minus] = spin.c_minus * np.eye(lay.d0)
            yield y0
            continue
        yp = qp @ (np.exp(-1j * wp * t)[:, None] * ap)
        ym = qm @ (np.exp(-1j * wm * t)[:, None] * am)
        yield np.vstack([spin.c_plus * yp, spin.c_minus * ym])


@dataclass
class EnsembleAverage:
    """Mean of a state-valued estimator with entrywise standard errors."""

    mean: JointState
    stderr: np.ndarray  # compact-coordinate standard errors, real
    n_samples: int
    resamples: int = 0


def average_evolved_state(model: MeasurementModel, t: float, n_samples: int,
                          rng: RngStream) -> EnsembleAverage:
    """Average of exp(-i(H0+eps V)t) rho0 exp(i(H0+eps V)t) over fresh V draws.

    Sample k uses stream ``rng.child(k)``; the sum is taken in ascending k.
    """
    if n_samples < 2:
        raise InvalidParameterError("n_samples must be >= 2")
    t = _check_time(t)
    rho0 = initial_state(model)
    mean = np.zeros((2 * model.layout.block_dim,) * 2, dtype=complex)
    m2 = np.zeros(mean.shape)
    resamples = 0
    # Welford update: identical samples give exactly zero variance
    for k in range(n_samples):
        _, cache, rejected = sample_cache(model, rng.child(k))
        resamples += rejected
        x = evolve(cache, rho0, t).compact()
        delta = x - mean
        mean = mean + delta / (k + 1)
        m2 += (delta * np.conj(x - mean)).real
    var = m2 / (n_samples - 1)
    return EnsembleAverage(JointState.from_compact(mean), np.sqrt(var / n_samples), n_samples, resamples)


def state_distance(a: JointState, b: JointState, metric: str = "trace") -> float:
    if metric == "trace":
        return trace_distance(a.compact(), b.compact())
    if metric == "frobenius":
        return frobenius_distance(a.compact(), b.compact())
    raise InvalidParameterError(f"unknown metric {metric!r}")


@dataclass
class ReversalResult:
    final_state: JointState
    trace_distance: float
    frobenius_distance: float
    # rows (t, p_plus, p_zero, p_minus) over the forward leg then the reverse leg
    prob_series: np.ndarray = field(repr=False)

    def distance(self, metric: str = "trace") -> float:
        if metric == "trace":
            return self.trace_distance
        if metric == "frobenius":
            return self.frobenius_distance
        raise InvalidParameterError(f"unknown metric {metric!r}")


def reverse_experiment(model: MeasurementModel, v: PerturbationV | EvolutionCache,
                       v_prime: PerturbationV | EvolutionCache, T: float,
                       n_points: int = 101) -> ReversalResult:
    """Evolve forward for T under H0+eps V, then backward for T under H0+eps V'."""
    T = _check_time(T)
    if T <= 0:
        raise InvalidParameterError("T must be > 0")
    fwd = v if isinstance(v, EvolutionCache) else prepare(model, v)
    bwd = v_prime if isinstance(v_prime, EvolutionCache) else prepare(model, v_prime)
    rho0 = initial_state(model)
    rho_T = evolve(fwd, rho0, T)
    rho_back = evolve(bwd, rho_T, -T)

    leg = np.linspace(0.0, T, n_points)
    forward = _EigenFrame(fwd, rho0).probabilities(leg)
    backward = _EigenFrame(bwd, rho_T).probabilities(-leg[1:])
    series = np.column_stack([
        np.concatenate([leg, T + leg[1:]]),
        np.vstack([forward, backward]),
    ])
    return ReversalResult(
        rho_back,
        state_distance(rho0, rho_back, "trace"),
        state_distance(rho0, rho_back, "frobenius"),
        series,
    )


def detect_plateau(times: np.ndarray, curve: np.ndarray, rel: float = 0.1) -> tuple[float, float]:
    """Plateau value (mean over the last decade of times) and onset time.

    The onset is the first time at which the curve is within ``rel`` of the
    plateau, relative to the plateau value.
    """
    times = np.asarray(times, dtype=float)
    curve = np.asarray(curve, dtype=float)
    last = times >= times[-1] / 10.0
    plateau = float(np.mean(curve[last]))
    close = np.abs(curve - plateau) <= rel * abs(plateau)
    onset = float(times[np.argmax(close)]) if close.any() else float(times[-1])
    return plateau, onset
