import numpy as np
import pytest
from scipy.linalg import block_diag

from finmeas import analytics, oracles
from finmeas.dynamics import (
    EvolutionCache,
    TimeGrid,
    average_evolved_state,
    detect_plateau,
    effective_dimension,
    equilibrium_probabilities,
    evolve,
    prepare,
    probability_timeseries,
    reverse_experiment,
    sample_cache,
    state_distance,
    time_averaged_state,
)
from finmeas.errors import InvalidParameterError, NumericInputError
from finmeas.model import (
    JointState,
    SpinState,
    build_model,
    initial_state,
    make_layout,
    outcome_probabilities,
    sample_perturbation,
)
from finmeas.rmt import RngStream, eig, trace_distance

HALF = SpinState(1 / np.sqrt(2), 1 / np.sqrt(2))
SKEW = SpinState.normalized(0.6, 0.8j)


def model_and_cache(N, eps=0.1, spin=HALF, seed=0):
    m = build_model(N, spin, eps, RngStream(seed, (N, 0)))
    v, cache, _ = sample_cache(m, RngStream(seed, (N, 1)))
    return m, v, cache


def compact_hamiltonian(cache):
    return block_diag(cache.spec_plus.reconstruct(), cache.spec_minus.reconstruct())


# ---------------------------------------------------------------- prepare

def test_prepare_without_perturbation_uses_bare_spectra():
    m = build_model(4, HALF, 0.0, RngStream(1))
    v = sample_perturbation(m, RngStream(2))
    cache = prepare(m, v)
    assert np.array_equal(cache.spec_plus.eigenvalues, eig(m.h_plus_block.matrix).eigenvalues)
    assert np.array_equal(cache.spec_minus.eigenvalues, eig(m.h_minus_block.matrix).eigenvalues)


def test_prepare_gaps_and_reconstruction():
    m = build_model(6, HALF, 0.1, RngStream(3))
    gen = RngStream(3, 1).generator()
    for _ in range(100):
        v = sample_perturbation(m, gen)
        cache = prepare(m, v)
        assert cache.spec_plus.min_gap > 0 and cache.spec_minus.min_gap > 0
    hp = m.h_plus_block.matrix + 0.1 * v.v_plus_block.matrix
    assert np.linalg.norm(cache.spec_plus.reconstruct() - hp) <= 1e-10 * np.linalg.norm(hp)


# ----------------------------------------------------------------- evolve

def test_evolve_at_zero_is_identity():
    m, _, cache = model_and_cache(4)
    rho0 = initial_state(m)
    assert evolve(cache, rho0, 0.0) is rho0


def test_forward_then_backward_recovers_state():
    m, _, cache = model_and_cache(6)
    rho0 = initial_state(m)
    back = evolve(cache, evolve(cache, rho0, 17.3), -17.3)
    assert state_distance(back, rho0) <= 1e-10


def test_evolve_rejects_non_finite_time():
    m, _, cache = model_and_cache(2)
    with pytest.raises(NumericInputError):
        evolve(cache, initial_state(m), np.inf)


def test_evolution_preserves_block_spectra():
    m, _, cache = model_and_cache(4, spin=SKEW)
    rho0 = initial_state(m)
    rho = evolve(cache, rho0, 2.9)
    for a, b in ((rho0.bpp, rho.bpp), (rho0.bmm, rho.bmm)):
        assert np.max(np.abs(np.linalg.eigvalsh(a) - np.linalg.eigvalsh(b))) <= 1e-11
        assert abs(np.trace(a) - np.trace(b)) <= 1e-11


@pytest.mark.parametrize("N", [2, 4])
def test_block_evolution_matches_full_space(N):
    m, v, cache = model_and_cache(N, eps=0.3, spin=SKEW)
    h = oracles.full_space_hamiltonian(m, v)
    rho0 = initial_state(m)
    for t in (0.7, 3.1):
        full = oracles.full_space_evolve(h, rho0.embed(m.layout), t)
        assert trace_distance(full, evolve(cache, rho0, t).embed(m.layout)) <= 1e-10


@pytest.mark.parametrize("N", [2, 4])
def test_probabilities_match_full_space_projectors(N):
    m, v, cache = model_and_cache(N, spin=SKEW)
    h = oracles.full_space_hamiltonian(m, v)
    proj = oracles.full_space_projectors(m.layout)
    full = oracles.full_space_evolve(h, initial_state(m).embed(m.layout), 1.3)
    want = [np.trace(full @ proj[k]).real for k in (1, 0, -1)]
    got = probability_timeseries(cache, initial_state(m), np.array([1.3]))[0, 1:]
    assert np.allclose(got, want, atol=1e-12)


# ------------------------------------------------------------ time series

def test_probability_rows_sum_to_one():
    m, _, cache = model_and_cache(6, spin=SKEW)
    rows = probability_timeseries(cache, initial_state(m), TimeGrid.make())
    assert rows.shape == (200, 4)
    assert np.max(np.abs(rows[:, 1:].sum(axis=1) - 1)) <= 1e-12


def test_probability_row_at_zero():
    m, _, cache = model_and_cache(4)
    row = probability_timeseries(cache, initial_state(m), np.array([0.0]))[0]
    assert row[1] == pytest.approx(0.0, abs=1e-14)
    assert row[2] == pytest.approx(1.0, abs=1e-14)


def test_series_agrees_with_direct_evolution():
    m, _, cache = model_and_cache(6, spin=SKEW)
    rho0 = initial_state(m)
    rows = probability_timeseries(cache, rho0, np.array([0.4, 40.0]))
    for row in rows:
        assert np.allclose(row[1:], outcome_probabilities(evolve(cache, rho0, row[0]), m.layout), atol=1e-12)


def test_long_time_mean_approaches_equilibrium():
    m, _, cache = model_and_cache(8)
    rho0 = initial_state(m)
    rows = probability_timeseries(cache, rho0, TimeGrid.make(10, 1000, 200, log=False))
    p_inf = equilibrium_probabilities(cache, rho0)[0]
    bound = analytics.equilibration_bound(m.layout, HALF, 1)
    assert abs(rows[:, 1].mean() - p_inf) <= 2 / np.sqrt(200) * bound


def test_probabilities_continuous_in_epsilon():
    m = build_model(6, HALF, 0.0, RngStream(9))
    v = sample_perturbation(m, RngStream(9, 1))
    grid = TimeGrid.make()
    a = probability_timeseries(prepare(m, v), initial_state(m), grid)
    b = probability_timeseries(prepare(m.with_epsilon(1e-8), v), initial_state(m), grid)
    assert np.max(np.abs(a[:, 1] - b[:, 1])) <= 1e-6


@pytest.mark.parametrize("N", [4, 6, 8])
def test_time_variance_respects_equilibration_bound(N):
    m, _, cache = model_and_cache(N, seed=4)
    t = TimeGrid.make().points
    p = probability_timeseries(cache, initial_state(m), t)[:, 1]
    # time average over [tmin, tmax] with trapezoid weights
    w = np.gradient(t)
    mean = np.sum(w * p) / w.sum()
    var = np.sum(w * (p - mean) ** 2) / w.sum()
    assert var <= analytics.equilibration_bound(m.layout, HALF, 1)


def test_time_grid_validation():
    assert len(TimeGrid.make(n=5)) == 5
    assert TimeGrid.make(0, 1, 3, log=False).spacing == "linear"
    with pytest.raises(InvalidParameterError):
        TimeGrid.make(0, 1, 3, log=True)
    with pytest.raises(InvalidParameterError):
        TimeGrid(np.array([1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        TimeGrid(np.array([0.0, np.nan]))


# ------------------------------------------------------- equilibrium state

def test_time_averaged_state_is_stationary():
    m, _, cache = model_and_cache(6, spin=SKEW)
    avg = time_averaged_state(cache, initial_state(m))
    assert state_distance(evolve(cache, avg, 5.3), avg) <= 1e-10
    assert not avg.bpm.any()


def test_time_averaged_probabilities_match_quadrature():
    m, _, cache = model_and_cache(4, seed=3)
    rho0 = initial_state(m)
    q = oracles.time_quadrature_average(compact_hamiltonian(cache), rho0.compact(), 1e3, 100_001)
    got = equilibrium_probabilities(cache, rho0)
    assert np.allclose(outcome_probabilities(JointState.from_compact(q), m.layout), got, atol=5e-3)


def test_time_average_without_minus_component():
    m, _, cache = model_and_cache(4, spin=SpinState(1, 0))
    avg = time_averaged_state(cache, initial_state(m))
    assert not avg.bmm.any() and not avg.bpm.any()


def test_no_plus_weight_gives_zero_plus_probability():
    m, _, cache = model_and_cache(4, spin=SpinState(0, 1))
    assert equilibrium_probabilities(cache, initial_state(m))[0] == 0.0


def test_single_draws_concentrate_at_n8():
    lay = make_layout(8)
    target = analytics.avg_equilibrium_probability(lay, HALF, 1)
    hits = 0
    for i in range(200):
        m = build_model(8, HALF, 0.1, RngStream(12, (i, 0)))
        _, cache, _ = sample_cache(m, RngStream(12, (i, 1)))
        hits += abs(equilibrium_probabilities(cache, initial_state(m))[0] - target) <= 0.05
    assert hits / 200 >= 0.95


# ---------------------------------------------------- effective dimension

def test_effective_dimension_of_pure_eigenstate_and_mixtures():
    m, _, cache = model_and_cache(4)
    n = m.layout.block_dim
    q = cache.spec_plus.eigenvectors
    zero = np.zeros((n, n), dtype=complex)
    pure = JointState(np.outer(q[:, 3], q[:, 3].conj()), zero, zero)
    assert effective_dimension(cache, pure) == pytest.approx(1.0, abs=1e-12)
    k = 7
    mixed = JointState(q[:, :k] @ q[:, :k].conj().T / k, zero, zero)
    assert effective_dimension(cache, mixed) == pytest.approx(k, rel=1e-12)


@pytest.mark.parametrize("N", [4, 6, 8, 10])
def test_effective_dimension_exceeds_closed_form_bound(N):
    for spin in (HALF, SKEW):
        m, _, cache = model_and_cache(N, spin=spin)
        lay = m.layout
        bound = lay.d0 ** 2 / 2 ** N / max(spin.w_plus, spin.w_minus) ** 2
        assert effective_dimension(cache, initial_state(m)) >= bound


# -------------------------------------------------------- ensemble average

def test_average_without_perturbation_has_zero_variance():
    m, _, _ = model_and_cache(4, eps=0.0)
    avg = average_evolved_state(m, 2.0, 5, RngStream(1))
    single = evolve(prepare(m), initial_state(m), 2.0)
    assert state_distance(avg.mean, single) <= 1e-12
    assert np.max(avg.stderr) <= 1e-12


def test_average_at_time_zero_is_initial_state():
    m, _, _ = model_and_cache(4)
    avg = average_evolved_state(m, 0.0, 5, RngStream(1))
    assert np.array_equal(avg.mean.compact(), initial_state(m).compact())
    assert not avg.stderr.any()


def test_average_is_deterministic():
    m, _, _ = model_and_cache(4)
    a = average_evolved_state(m, 1.0, 6, RngStream(2))
    b = average_evolved_state(m, 1.0, 6, RngStream(2))
    assert np.array_equal(a.mean.compact(), b.mean.compact())
    with pytest.raises(InvalidParameterError):
        average_evolved_state(m, 1.0, 1, RngStream(2))


# ---------------------------------------------------------------- reversal

def test_reversal_with_same_perturbation_is_exact():
    m, v, _ = model_and_cache(6, eps=0.5)
    res = reverse_experiment(m, v, v, 50.0)
    assert res.trace_distance <= 1e-10
    assert res.prob_series.shape == (201, 4)
    assert np.max(np.abs(res.prob_series[:, 1:].sum(axis=1) - 1)) <= 1e-12
    assert res.prob_series[-1, 2] == pytest.approx(1.0, abs=1e-10)


def test_reversal_without_perturbation_is_exact():
    m, v, _ = model_and_cache(6, eps=0.0)
    w = sample_perturbation(m, RngStream(99))
    assert reverse_experiment(m, v, w, 50.0).trace_distance <= 1e-10


def test_reversal_with_fresh_perturbation_is_far():
    m, v, _ = model_and_cache(6, eps=0.5)
    res = reverse_experiment(m, v, sample_perturbation(m, RngStream(98)), 50.0)
    assert res.distance("trace") > 0.1
    assert res.distance("frobenius") == res.frobenius_distance
    with pytest.raises(InvalidParameterError):
        reverse_experiment(m, v, v, 0.0)


def test_reversal_accepts_caches():
    m, v, cache = model_and_cache(4, eps=0.2)
    assert isinstance(cache, EvolutionCache)
    assert reverse_experiment(m, cache, cache, 3.0).trace_distance <= 1e-10


# ----------------------------------------------------------------- plateau

def test_detect_plateau_on_synthetic_decay():
    t = np.geomspace(1e-3, 1e3, 200)
    curve = 0.05 + np.exp(-t)
    plateau, onset = detect_plateau(t, curve)
    assert plateau == pytest.approx(0.05, rel=1e-12)
    # exp(-t) <= 0.005 first at t ~ 5.3
    assert 5.0 <= onset <= 6.0
