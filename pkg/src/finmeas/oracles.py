"""Independent reference computations used by the test suite and ``finmeas selftest``.

None of these share code paths with the block/spectral machinery they check:
full-space dense evolution via ``scipy.linalg.expm``, brute-force time
quadrature, and plain Monte-Carlo over Haar samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from finmeas.model import ApparatusLayout, MeasurementModel, PerturbationV
from finmeas.rmt import RngStream, sample_haar_states, sample_haar_unitaries

# Full-space oracle is exponential in N; keep it to desk scale.
FULL_SPACE_MAX_N = 4


def full_space_hamiltonian(model: MeasurementModel, v: PerturbationV | None = None) -> np.ndarray:
    """Dense ``2**(N+1)`` Hamiltonian |+><+|(x)(H+ (+) 0) + |-><-|(x)(0 (+) H-)."""
    lay = model.layout
    if lay.N > FULL_SPACE_MAX_N:
        raise ValueError(f"full-space oracle limited to N <= {FULL_SPACE_MAX_N}")
    hp = model.h_plus_block.matrix.copy()
    hm = model.h_minus_block.matrix.copy()
    if v is not None:
        hp = hp + model.epsilon * v.v_plus_block.matrix
        hm = hm + model.epsilon * v.v_minus_block.matrix
    a = lay.dim
    app_plus = np.zeros((a, a), dtype=complex)
    app_plus[lay.plus_slice, lay.plus_slice] = hp
    app_minus = np.zeros((a, a), dtype=complex)
    app_minus[lay.minus_slice, lay.minus_slice] = hm
    up = np.diag([1.0, 0.0])
    down = np.diag([0.0, 1.0])
    return np.kron(up, app_plus) + np.kron(down, app_minus)


def full_space_initial_state(model: MeasurementModel) -> np.ndarray:
    lay = model.layout
    psi = np.array([model.spin.c_plus, model.spin.c_minus])
    app = np.zeros((lay.dim, lay.dim), dtype=complex)
    idx = np.arange(lay.d1, lay.d1 + lay.d0)
    app[idx, idx] = 1.0 / lay.d0
    return np.kron(np.outer(psi, psi.conj()), app)


def full_space_evolve(h: np.ndarray, rho: np.ndarray, t: float) -> np.ndarray:
    u = expm(-1j * h * t)
    return u @ rho @ u.conj().T


def full_space_projectors(layout: ApparatusLayout) -> dict[int, np.ndarray]:
    """Projectors 1 (x) Pi_outcome on the full space, keyed by +1, 0, -1."""
    a = layout.dim
    masks = {
        1: np.arange(a) < layout.d1,
        0: (np.arange(a) >= layout.d1) & (np.arange(a) < layout.d1 + layout.d0),
        -1: np.arange(a) >= layout.d1 + layout.d0,
    }
    return {k: np.kron(np.eye(2), np.diag(m.astype(float))) for k, m in masks.items()}


def time_quadrature_average(h: np.ndarray, rho: np.ndarray, T: float, n_points: int = 10_001) -> np.ndarray:
    """(1/T) int_0^T exp(-iHt) rho exp(iHt) dt by the trapezoid rule."""
    if n_points < 10_000:
        raise ValueError("time-quadrature oracle needs at least 1e4 points")
    times = np.linspace(0.0, T, n_points)
    step = expm(-1j * h * (times[1] - times[0]))
    u = np.eye(h.shape[0], dtype=complex)
    acc = np.zeros_like(rho, dtype=complex)
    for i in range(n_points):
        w = 0.5 if i in (0, n_points - 1) else 1.0
        acc += w * (u @ rho @ u.conj().T)
        u = step @ u
    return acc / (n_points - 1)


@dataclass
class MonteCarloEstimate:
    mean: np.ndarray | float
    stderr: np.ndarray | float
    n: int

    def within(self, value, k: float = 3.0) -> bool:
        """All |mean - value| <= k standard errors (a zero SE requires exact agreement)."""
        diff = np.abs(np.asarray(self.mean) - np.asarray(value))
        return bool(np.all(diff <= k * np.asarray(self.stderr) + 1e-15))


def haar_fourth_moment_mc(d: int, indices: tuple[int, int, int, int], n: int,
                          rng: RngStream | np.random.Generator, batch: int = 50_000) -> MonteCarloEstimate:
    """Monte-Carlo estimate of E[U_{i1,1} U_{i2,1} U*_{i3,1} U*_{i4,1}] (1-based indices).

    Full Haar unitaries are drawn and their first column used.
    """
    gen = rng if isinstance(rng, np.random.Generator) else rng.generator()
    i1, i2, i3, i4 = (i - 1 for i in indices)
    vals = []
    left = n
    while left > 0:
        m = min(batch, left)
        col = sample_haar_unitaries(d, m, gen)[:, :, 0]
        vals.append(col[:, i1] * col[:, i2] * col[:, i3].conj() * col[:, i4].conj())
        left -= m
    x = np.concatenate(vals)
    # the exact moment is real; the imaginary part is pure noise
    re = x.real
    return MonteCarloEstimate(float(re.mean()), float(re.std(ddof=1) / np.sqrt(n)), n)


def pap_mc(a: np.ndarray, n: int, rng: RngStream | np.random.Generator) -> MonteCarloEstimate:
    """Monte-Carlo estimate of E[P A P] for P the projector onto a Haar vector."""
    gen = rng if isinstance(rng, np.random.Generator) else rng.generator()
    d = a.shape[0]
    v = sample_haar_states(d, n, gen)
    amp = np.einsum("ni,ij,nj->n", v.conj(), a, v)
    samples = amp[:, None, None] * v[:, :, None] * v.conj()[:, None, :]
    mean = samples.mean(axis=0)
    # entrywise SE of the complex estimate, combining real and imaginary parts
    se = np.sqrt((samples.real.var(axis=0, ddof=1) + samples.imag.var(axis=0, ddof=1)) / n)
    return MonteCarloEstimate(mean, se, n)
