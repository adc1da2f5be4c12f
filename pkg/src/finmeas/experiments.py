"""Seeded, replayable ensemble experiments.

Every random draw comes from an :class:`~finmeas.rmt.RngStream` addressed by
``(root seed, stream path)``, and every reduction runs in ascending stream
index, so a manifest fully determines the rows it produces regardless of
thread count.

Stream paths (first element is the experiment tag):

* equilibrate: bare model ``(0, h)``, perturbation ``(1, h, k)``
* typicality:  row ``(2, N, i)``; model from child 0, V from child 1
* reverse:     bare model ``(3, N)``, trial ``(4, N, k)``; V child 0, V' child 1
* born:        row ``(5, N, i)``, same layout as typicality
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from finmeas import __version__
from finmeas import analytics
from finmeas.dynamics import (
    TimeGrid,
    detect_plateau,
    equilibrium_probabilities,
    initial_state,
    microcanonical_factors,
    prepare,
    probability_timeseries,
    reverse_experiment,
    sample_cache,
)
from finmeas.errors import DegenerateSpectrumError, InvalidParameterError
from finmeas.model import MAX_N, MeasurementModel, SpinState, build_model, make_layout, sample_perturbation
from finmeas.rmt import RngStream, frobenius_distance, trace_distance

DEFAULT_EPSILONS = (0.0, 0.01, 0.05, 0.1, 0.3, 0.5, 1.0)
EXPERIMENTS = ("equilibrate", "typicality", "reverse", "born", "analytic")
# Samples reduced together before being folded into the running total.
CHUNK = 16
# Budget for the per-time accumulators of the equilibration experiment.
ACCUMULATOR_BYTES = 64 * 2 ** 20


@dataclass
class ExperimentManifest:
    """Everything needed to regenerate an experiment's rows byte for byte."""

    experiment: str
    seed: int = 0
    N: int = 8
    epsilon: float = 0.1
    spin: tuple = ((0.5, 0.0), (np.sqrt(3) / 2, 0.0))
    n_samples: int = 200
    tmin: float = 1e-3
    tmax: float = 1e3
    tpoints: int = 200
    log: bool = True
    metric: str = "trace"
    delta: float = 0.05
    epsilon_list: tuple = DEFAULT_EPSILONS
    n_list: tuple | None = None
    T: float | None = None
    n_h0: int = 2
    flag_epsilon: float = 0.1
    max_n: int = MAX_N
    version: str = __version__

    def __post_init__(self):
        self.spin = tuple(tuple(float(x) for x in amp) for amp in self.spin)
        self.epsilon_list = tuple(float(e) for e in self.epsilon_list)
        if self.n_list is not None:
            self.n_list = tuple(int(n) for n in self.n_list)
        if self.experiment not in EXPERIMENTS:
            raise InvalidParameterError(f"unknown experiment {self.experiment!r}")
        if self.metric not in ("trace", "frobenius"):
            raise InvalidParameterError(f"unknown metric {self.metric!r}")
        if self.epsilon < 0 or any(e < 0 for e in self.epsilon_list):
            raise InvalidParameterError("epsilon must be >= 0")
        make_layout(self.N, self.max_n)
        for n in self.n_list or ():
            make_layout(n, self.max_n)
        self.spin_state()

    def spin_state(self) -> SpinState:
        (pr, pi), (mr, mi) = self.spin
        return SpinState(complex(pr, pi), complex(mr, mi))

    def grid(self) -> TimeGrid:
        return TimeGrid.make(self.tmin, self.tmax, self.tpoints, self.log)

    def sizes(self) -> tuple[int, ...]:
        return self.n_list if self.n_list else (self.N,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spin"] = [list(a) for a in self.spin]
        d["epsilon_list"] = list(self.epsilon_list)
        d["n_list"] = list(self.n_list) if self.n_list is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunRecord:
    manifest: ExperimentManifest
    columns: tuple[str, ...]
    rows: list[tuple]
    aggregates: dict = field(default_factory=dict)
    resamples: int = 0
    wall_time: float = 0.0

    def write(self, outdir: str | os.PathLike) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "manifest.json", "w") as fh:
            json.dump(self.manifest.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "rows.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([format_value(v) for v in row])
        summary = {
            "experiment": self.manifest.experiment,
            "aggregates": self.aggregates,
            "resamples": self.resamples,
            "wall_time": self.wall_time,
        }
        with open(out / "summary.json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return out


def format_value(v) -> str:
    """Shortest round-trip text for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def _ordered_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """``map`` preserving input order; threads > 1 (or 0 = auto) uses a pool."""
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    workers = threads if threads > 0 else (os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _chunks(n: int, size: int = CHUNK) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


# ---------------------------------------------------------------- equilibrate

def _metric_gradient(delta: np.ndarray, metric: str) -> np.ndarray:
    """Hermitian G with d(distance) = Re tr(G d(rho)) at rho - sigma = delta."""
    if metric == "trace":
        w, u = np.linalg.eigh(0.5 * (delta + delta.conj().T))
        return 0.5 * (u * np.sign(w)) @ u.conj().T
    norm = np.linalg.norm(delta)
    return delta / norm if norm > 0 else np.zeros_like(delta)


def _distance(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    return trace_distance(a, b) if metric == "trace" else frobenius_distance(a, b)


def equilibration_experiment(manifest: ExperimentManifest, threads: int = 1) -> RunRecord:
    """Distance of the V-averaged evolved state to the fully averaged equilibrium state.

    For each of ``n_h0`` bare Hamiltonians, the state is averaged over
    ``n_samples`` perturbations at every grid time. Standard errors are
    linearized: the distance's gradient at the mean is applied to each sample
    in a second pass over the same streams.
    """
    if manifest.n_samples < 10:
        raise InvalidParameterError("equilibrate needs n_samples >= 10")
    start = time.perf_counter()
    spin = manifest.spin_state()
    times = manifest.grid().points
    rows, per_h0, resamples = [], [], 0
    root = RngStream(manifest.seed)
    n = manifest.n_samples
    for h in range(manifest.n_h0):
        model = build_model(manifest.N, spin, manifest.epsilon, root.child(0, h), manifest.max_n)
        lay = model.layout
        ref = analytics.avg_equilibrium_state(lay, spin).compact()
        dim2 = 2 * lay.block_dim
        tblock = max(1, ACCUMULATOR_BYTES // (16 * dim2 * dim2))
        means, grads = [], []
        # Welford accumulators of the linearized per-sample distance
        fmean = np.zeros(times.size)
        fm2 = np.zeros(times.size)
        seen = np.zeros(times.size, dtype=int)

        def cache_for(k):
            return sample_cache(model, root.child(1, h, k))

        for lo in range(0, times.size, tblock):
            tb = times[lo:lo + tblock]

            def chunk_sum(ks, tb=tb):
                acc = np.zeros((tb.size, dim2, dim2), dtype=complex)
                rej = 0
                for k in ks:
                    _, cache, r = cache_for(k)
                    rej += r
                    for i, y in enumerate(microcanonical_factors(cache, spin, tb)):
                        acc[i] += y @ y.conj().T
                return acc, rej

            total = np.zeros((tb.size, dim2, dim2), dtype=complex)
            for acc, rej in _ordered_map(chunk_sum, _chunks(n), threads):
                total += acc
                if lo == 0:
                    resamples += rej
            mean = total / (n * lay.d0)
            means.extend(mean)
            grads.extend(_metric_gradient(m - ref, manifest.metric) for m in mean)

            def chunk_f(ks, tb=tb, lo=lo):
                vals = np.zeros((len(ks), tb.size))
                for j, k in enumerate(ks):
                    _, cache, _ = cache_for(k)
                    for i, y in enumerate(microcanonical_factors(cache, spin, tb)):
                        g = grads[lo + i]
                        vals[j, i] = np.vdot(y, g @ y).real / lay.d0
                return vals

            sl = slice(lo, lo + tb.size)
            for vals in _ordered_map(chunk_f, _chunks(n), threads):
                for v in vals:
                    seen[sl] += 1
                    delta = v - fmean[sl]
                    fmean[sl] += delta / seen[sl]
                    fm2[sl] += delta * (v - fmean[sl])

        dist = np.array([_distance(m, ref, manifest.metric) for m in means])
        var = fm2 / (n - 1)
        stderr = np.sqrt(var / n)
        for t, d, s in zip(times, dist, stderr):
            rows.append((h, float(t), float(d), float(s), n))
        plateau, onset = detect_plateau(times, dist)
        per_h0.append({
            "h0_index": h,
            "plateau": plateau,
            "plateau_onset": onset,
            "initial_distance": _distance(initial_state(model).compact(), ref, manifest.metric),
            "max_stderr_in_plateau": float(np.max(stderr[times >= times[-1] / 10.0])),
        })
    aggregates = {
        "per_h0": per_h0,
        "plateau_mean": float(np.mean([p["plateau"] for p in per_h0])),
        "metric": manifest.metric,
    }
    return RunRecord(manifest, ("h0_index", "t", "mean_distance", "stderr", "n_samples"), rows,
                     aggregates, resamples, time.perf_counter() - start)


# ----------------------------------------------------------------- typicality

def equilibrium_draw(N: int, spin: SpinState, epsilon: float, stream: RngStream,
                     max_n: int = MAX_N) -> tuple[tuple[float, float, float], int]:
    """Equilibrium outcome probabilities for one jointly sampled (H0, V)."""
    model = build_model(N, spin, epsilon, stream.child(0), max_n)
    _, cache, rejected = sample_cache(model, stream.child(1))
    return equilibrium_probabilities(cache, initial_state(model)), rejected


def _equilibrium_rows(manifest: ExperimentManifest, tag: int, N: int, threads: int):
    spin = manifest.spin_state()
    root = RngStream(manifest.seed)

    def one(i):
        return equilibrium_draw(N, spin, manifest.epsilon, root.child(tag, N, i), manifest.max_n)

    return _ordered_map(one, range(manifest.n_samples), threads)


def typicality_experiment(manifest: ExperimentManifest, delta: float | None = None,
                          threads: int = 1) -> RunRecord:
    """Spread of single-draw equilibrium probabilities around their ensemble mean."""
    if manifest.n_samples < 50:
        raise InvalidParameterError("typicality needs n_samples >= 50")
    delta = manifest.delta if delta is None else float(delta)
    start = time.perf_counter()
    spin = manifest.spin_state()
    rows, per_n, resamples = [], {}, 0
    for N in manifest.sizes():
        lay = make_layout(N, manifest.max_n)
        target = analytics.avg_equilibrium_probability(lay, spin, 1)
        draws = _equilibrium_rows(manifest, 2, N, threads)
        p = np.array([d[0] for d in draws])
        resamples += sum(d[1] for d in draws)
        for i, (pp, p0, pm) in enumerate(p):
            rows.append((N, i, float(pp), float(p0), float(pm)))
        std = float(np.std(p[:, 0], ddof=1))
        per_n[N] = {
            "analytic_p_plus": target,
            "analytic_p_zero": analytics.avg_prob_zero(lay),
            "mean_p_plus": float(np.mean(p[:, 0])),
            "std_p_plus": std,
            "stderr_p_plus": std / np.sqrt(len(p)),
            "mean_p_zero": float(np.mean(p[:, 1])),
            "deviation_fraction": float(np.mean(np.abs(p[:, 0] - target) > delta)),
            "block_dim": lay.block_dim,
        }
    return RunRecord(manifest, ("N", "stream_index", "p_plus_inf", "p_zero_inf", "p_minus_inf"), rows,
                     {"per_N": per_n, "delta": delta}, resamples, time.perf_counter() - start)


# -------------------------------------------------------------------- reverse

def default_reversal_time(model: MeasurementModel, grid: TimeGrid) -> float:
    """Ten times the plateau onset of the outcome-0 probability under the bare Hamiltonian."""
    series = probability_timeseries(prepare(model.with_epsilon(0.0)), initial_state(model), grid)
    _, onset = detect_plateau(series[:, 0], series[:, 2])
    return 10.0 * onset


def _prepare_with_retry(model: MeasurementModel, v, gen: np.random.Generator):
    rejected = 0
    while True:
        try:
            return prepare(model, v), v, rejected
        except DegenerateSpectrumError:
            rejected += 1
            if rejected > 100:
                raise
            v = sample_perturbation(model, gen)


def irreversibility_experiment(manifest: ExperimentManifest, epsilon_list: Iterable[float] | None = None,
                               T: float | None = None, threads: int = 1) -> RunRecord:
    """Forward-then-perturbed-backward evolution over a sweep of perturbation strengths.

    The same (V, V') pair is used for trial k at every epsilon.
    """
    start = time.perf_counter()
    eps_list = tuple(manifest.epsilon_list if epsilon_list is None else (float(e) for e in epsilon_list))
    spin = manifest.spin_state()
    root = RngStream(manifest.seed)
    N = manifest.N
    bare = build_model(N, spin, 0.0, root.child(3, N), manifest.max_n)
    if T is None:
        T = manifest.T if manifest.T is not None else default_reversal_time(bare, manifest.grid())
    if not T > 0:
        raise InvalidParameterError("T must be > 0")
    flag_eps = min(eps_list, key=lambda e: abs(e - manifest.flag_epsilon))

    def trial(k):
        out, rej = [], 0
        for eps in eps_list:
            model = bare.with_epsilon(eps)
            stream = root.child(4, N, k)
            g1, g2 = stream.child(0).generator(), stream.child(1).generator()
            fwd, _, r1 = _prepare_with_retry(model, sample_perturbation(model, g1), g1)
            bwd, _, r2 = _prepare_with_retry(model, sample_perturbation(model, g2), g2)
            rej += r1 + r2
            n_points = 101 if (k == 0 and eps == flag_eps) else 2
            out.append(reverse_experiment(model, fwd, bwd, T, n_points=n_points))
        return out, rej

    results = _ordered_map(trial, range(manifest.n_samples), threads)
    rows, resamples = [], 0
    by_eps = {eps: [] for eps in eps_list}
    for k, (res, rej) in enumerate(results):
        resamples += rej
        for eps, r in zip(eps_list, res):
            rows.append((eps, k, r.trace_distance, r.frobenius_distance))
            by_eps[eps].append(r.distance(manifest.metric))
    rows.sort(key=lambda r: (eps_list.index(r[0]), r[1]))
    per_eps = []
    for eps in eps_list:
        d = np.array(by_eps[eps])
        per_eps.append({
            "epsilon": eps,
            "median": float(np.median(d)),
            "mean": float(np.mean(d)),
            "stderr": float(np.std(d, ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0,
        })
    flagged = results[0][0][eps_list.index(flag_eps)].prob_series
    aggregates = {
        "N": N,
        "T": T,
        "metric": manifest.metric,
        "per_epsilon": per_eps,
        "flagged_trial": {"epsilon": flag_eps, "stream_index": 0,
                          "columns": ["t", "p_plus", "p_zero", "p_minus"], "series": flagged},
    }
    return RunRecord(manifest, ("epsilon", "stream_index", "trace_distance", "frobenius_distance"), rows,
                     aggregates, resamples, time.perf_counter() - start)


# ----------------------------------------------------------------------- born

def born_convergence_experiment(manifest: ExperimentManifest, n_list: Iterable[int] | None = None,
                                threads: int = 1) -> RunRecord:
    """Analytic and Monte-Carlo equilibrium probabilities against apparatus size."""
    start = time.perf_counter()
    sizes = tuple(int(n) for n in n_list) if n_list is not None else manifest.sizes()
    spin = manifest.spin_state()
    rows, per_n, resamples = [], {}, 0
    for N in sizes:
        lay = make_layout(N, manifest.max_n)
        draws = _equilibrium_rows(manifest, 5, N, threads)
        resamples += sum(d[1] for d in draws)
        p = np.array([d[0][0] for d in draws])
        analytic = analytics.avg_equilibrium_probability(lay, spin, 1)
        se = float(np.std(p, ddof=1) / np.sqrt(p.size)) if p.size > 1 else float("nan")
        mean = float(np.mean(p))
        rows.append((N, analytic, mean, se, analytics.avg_prob_zero(lay)))
        per_n[N] = {
            "analytic_p_plus": analytic,
            "analytic_p_zero": analytics.avg_prob_zero(lay),
            "mc_mean": mean,
            "mc_stderr": se,
            "textbook_gap": spin.w_plus - analytic,
            "within_3se": bool(abs(mean - analytic) <= 3 * se),
        }
    gaps = [per_n[N]["textbook_gap"] for N in sizes]
    aggregates = {
        "per_N": per_n,
        "gap_decreasing": bool(all(a > b for a, b in zip(gaps, gaps[1:]))),
        "all_within_3se": bool(all(v["within_3se"] for v in per_n.values())),
    }
    return RunRecord(manifest, ("N", "analytic_p_plus", "mc_mean", "mc_stderr", "analytic_p_zero"), rows,
                     aggregates, resamples, time.perf_counter() - start)


# ------------------------------------------------------------------- analytic

def analytic_summary(manifest: ExperimentManifest) -> RunRecord:
    """Closed-form probabilities, bounds and states for each requested size."""
    start = time.perf_counter()
    spin = manifest.spin_state()
    rows, per_n = [], {}
    for N in manifest.sizes():
        lay = make_layout(N, manifest.max_n)
        summary = analytics.equilibrium_summary(lay, spin)
        eq13 = summary.state
        eq14 = analytics.limit_state(lay, spin)
        entry = summary.as_dict()
        entry.update({
            "bound_plus": analytics.equilibration_bound(lay, spin, 1),
            "bound_minus": analytics.equilibration_bound(lay, spin, -1),
            "distance_to_limit_state": trace_distance(eq13.compact(), eq14.compact()),
            "table": [{"outcome": o, "probability": p} for o, p, _ in analytics.post_measurement_table(lay, spin)],
        })
        per_n[N] = entry
        rows.append((N, lay.d0, lay.d1, summary.p_plus, summary.p_zero, summary.p_minus))
    return RunRecord(manifest, ("N", "d0", "d1", "p_plus", "p_zero", "p_minus"), rows,
                     {"per_N": per_n}, 0, time.perf_counter() - start)


def run_manifest(manifest: ExperimentManifest, threads: int = 1) -> RunRecord:
    if manifest.experiment == "equilibrate":
        return equilibration_experiment(manifest, threads)
    if manifest.experiment == "typicality":
        return typicality_experiment(manifest, threads=threads)
    if manifest.experiment == "reverse":
        return irreversibility_experiment(manifest, threads=threads)
    if manifest.experiment == "born":
        return born_convergence_experiment(manifest, threads=threads)
    return analytic_summary(manifest)
