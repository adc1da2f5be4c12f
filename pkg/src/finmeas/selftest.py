"""Quick oracle checks run by ``finmeas selftest``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from finmeas import analytics, oracles
from finmeas.dynamics import evolve, sample_cache
from finmeas.model import SpinState, build_model, initial_state, make_layout
from finmeas.rmt import RngStream, dephase, haar_column_fourth_moment, sample_gue, trace_distance


def _fourth_moment() -> tuple[bool, str]:
    est = oracles.haar_fourth_moment_mc(4, (1, 2, 1, 2), 50_000, RngStream(11, 0))
    exact = haar_column_fourth_moment(4, 1, 2, 1, 2)
    return est.within(exact), f"mc={est.mean:.5f}+-{est.stderr:.5f} exact={exact:.5f}"


def _pap() -> tuple[bool, str]:
    d = 12
    a = np.zeros((d, d))
    a[:4, :4] = np.eye(4) / 4
    est = oracles.pap_mc(a, 20_000, RngStream(11, 1))
    exact = analytics.pap_average(a, d)
    err = float(np.max(np.abs(est.mean - exact)))
    return est.within(exact), f"max |mc - exact| = {err:.2e}"


def _block_vs_full() -> tuple[bool, str]:
    worst = 0.0
    spin = SpinState.normalized(0.6, 0.8j)
    for N in (2, 4):
        model = build_model(N, spin, 0.3, RngStream(11, (2, N)))
        v, cache, _ = sample_cache(model, RngStream(11, (3, N)))
        h = oracles.full_space_hamiltonian(model, v)
        rho0 = initial_state(model)
        for t in (0.7, 3.1):
            full = oracles.full_space_evolve(h, rho0.embed(model.layout), t)
            block = evolve(cache, rho0, t).embed(model.layout)
            worst = max(worst, trace_distance(full, block))
    return worst <= 1e-10, f"max trace distance {worst:.2e}"


def _dephasing_quadrature() -> tuple[bool, str]:
    gen = RngStream(11, 4).generator()
    h = sample_gue(30, gen)
    psi = gen.standard_normal(30) + 1j * gen.standard_normal(30)
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    T = 1e4 / np.linalg.norm(h.matrix, 2)
    quad = oracles.time_quadrature_average(h.matrix, rho, T, 10_001)
    dist = trace_distance(quad, dephase(rho, h.spectrum))
    return dist <= 2e-2, f"trace distance {dist:.2e}"


def _identities() -> tuple[bool, str]:
    spin = SpinState.normalized(0.5, np.sqrt(3) / 2)
    for N in range(2, 17, 2):
        a, b = analytics.outcome_fractions(make_layout(N))
        if a + b != 1:
            return False, f"outcome fractions do not sum to one at N={N}"
    worst = 0.0
    # dense block states: keep to small N
    for N in range(2, 11, 2):
        lay = make_layout(N)
        mix = None
        for _, p, st in analytics.post_measurement_table(lay, spin):
            mix = st.scaled(p) if mix is None else mix + st.scaled(p)
        ref = analytics.avg_equilibrium_state(lay, spin)
        worst = max(worst, float(np.max(np.abs(mix.compact() - ref.compact()))))
    return worst <= 1e-15, f"table-mixture residual {worst:.1e}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "haar_fourth_moment": _fourth_moment,
    "pap_average": _pap,
    "block_vs_full_space": _block_vs_full,
    "dephasing_vs_quadrature": _dephasing_quadrature,
    "closed_form_identities": _identities,
}


def run_selftest(echo: Callable[[str], None] = print) -> list[tuple[str, bool, str]]:
    results = []
    for name, check in CHECKS.items():
        ok, detail = check()
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        results.append((name, ok, detail))
    return results

