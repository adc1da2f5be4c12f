"""Closed-form ensemble averages for the measurement model.

Dimension ratios are evaluated as exact fractions and only converted to
floats when multiplied by the (floating) spin weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from finmeas.errors import ContractViolationError, InvalidDimensionError
from finmeas.model import ApparatusLayout, JointState, SpinState


def outcome_fractions(layout: ApparatusLayout) -> tuple[Fraction, Fraction]:
    """``(d1/(d+1), (d0+1)/(d+1))`` with ``d = d0 + d1``."""
    d = layout.d0 + layout.d1
    return Fraction(layout.d1, d + 1), Fraction(layout.d0 + 1, d + 1)


def avg_equilibrium_probability(layout: ApparatusLayout, spin: SpinState, outcome: int) -> float:
    """Ensemble mean of the equilibrium probability of outcome +1 or -1."""
    frac, _ = outcome_fractions(layout)
    return spin.weight(outcome) * float(frac)


def avg_prob_zero(layout: ApparatusLayout) -> float:
    return float(outcome_fractions(layout)[1])


def avg_prob_zero_exact(layout: ApparatusLayout) -> Fraction:
    return outcome_fractions(layout)[1]


def _diag_blocks(layout: ApparatusLayout, plus_diag: np.ndarray, minus_diag: np.ndarray) -> JointState:
    n = layout.block_dim
    return JointState(np.diag(plus_diag).astype(complex), np.diag(minus_diag).astype(complex),
                      np.zeros((n, n), dtype=complex))


def _sector_diag(layout: ApparatusLayout, outer: float, zero: float, sign: int) -> np.ndarray:
    """Diagonal over S+ (sign=+1) or S- (sign=-1) with given H_{+-1} and H_0 values."""
    outer_part = np.full(layout.d1, outer, dtype=float)
    zero_part = np.full(layout.d0, zero, dtype=float)
    if sign > 0:
        return np.concatenate([outer_part, zero_part])
    return np.concatenate([zero_part, outer_part])


def post_measurement_table(layout: ApparatusLayout, spin: SpinState) -> list[tuple[int, float, JointState]]:
    """Rows ``(outcome, probability, post-measurement state)`` for +1, -1 and 0."""
    frac_pm, frac_0 = outcome_fractions(layout)
    d0, d1 = layout.d0, layout.d1
    zeros = np.zeros(layout.block_dim)
    up = _diag_blocks(layout, _sector_diag(layout, 1.0 / d1, 0.0, +1), zeros)
    down = _diag_blocks(layout, zeros, _sector_diag(layout, 1.0 / d1, 0.0, -1))
    zero = _diag_blocks(
        layout,
        _sector_diag(layout, 0.0, spin.w_plus / d0, +1),
        _sector_diag(layout, 0.0, spin.w_minus / d0, -1),
    )
    return [
        (1, spin.w_plus * float(frac_pm), up),
        (-1, spin.w_minus * float(frac_pm), down),
        (0, float(frac_0), zero),
    ]


def avg_equilibrium_state(layout: ApparatusLayout, spin: SpinState) -> JointState:
    """The (H0, V)-averaged time-averaged state: a mixture of the three outcome states."""
    d = layout.d0 + layout.d1
    d0 = layout.d0
    zero_level = (d0 + 1) / (d0 * (d + 1))
    return _diag_blocks(
        layout,
        spin.w_plus * _sector_diag(layout, 1.0 / (d + 1), zero_level, +1),
        spin.w_minus * _sector_diag(layout, 1.0 / (d + 1), zero_level, -1),
    )


def limit_state(layout: ApparatusLayout, spin: SpinState) -> JointState:
    """Large-apparatus limit: the ideal von Neumann post-measurement mixture."""
    d1 = layout.d1
    return _diag_blocks(
        layout,
        spin.w_plus * _sector_diag(layout, 1.0 / d1, 0.0, +1),
        spin.w_minus * _sector_diag(layout, 1.0 / d1, 0.0, -1),
    )


def equilibration_bound_exact(layout: ApparatusLayout) -> Fraction:
    """``2**N / d0**2``; multiply by |c|^4 for the time-variance bound."""
    return Fraction(2 ** layout.N, layout.d0 ** 2)


def equilibration_bound(layout: ApparatusLayout, spin: SpinState, outcome: int) -> float:
    """Upper bound on the infinite-time variance of an outcome probability."""
    return spin.weight(outcome) ** 2 * float(equilibration_bound_exact(layout))


def pap_average(a: np.ndarray, d: int) -> np.ndarray:
    """Haar average of P A P for a rank-one projector P onto a random vector.

    Requires tr A = 1, in which case the average is (A + 1)/(d(d+1)).
    """
    a = np.asarray(a)
    if a.shape != (d, d):
        raise InvalidDimensionError(f"A has shape {a.shape}, expected ({d}, {d})")
    tr = np.trace(a)
    if abs(tr - 1.0) > 1e-12:
        raise ContractViolationError(f"tr A must be 1, got {tr!r}")
    return (a + np.eye(d)) / (d * (d + 1))


@dataclass(frozen=True, eq=False)
class EquilibriumSummary:
    p_plus: float
    p_zero: float
    p_minus: float
    state: JointState
    layout: ApparatusLayout

    def as_dict(self) -> dict:
        frac_pm, frac_0 = outcome_fractions(self.layout)
        return {
            "N": self.layout.N,
            "d0": self.layout.d0,
            "d1": self.layout.d1,
            "p_plus": self.p_plus,
            "p_zero": self.p_zero,
            "p_minus": self.p_minus,
            "p_zero_exact": str(frac_0),
            "outcome_fraction_exact": str(frac_pm),
        }


def equilibrium_summary(layout: ApparatusLayout, spin: SpinState) -> EquilibriumSummary:
    state = avg_equilibrium_state(layout, spin)
    p_plus = avg_equilibrium_probability(layout, spin, 1)
    p_minus = avg_equilibrium_probability(layout, spin, -1)
    return EquilibriumSummary(p_plus, avg_prob_zero(layout), p_minus, state, layout)

