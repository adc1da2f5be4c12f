"""Command-line front end.

    finmeas analytic --n 8 --spin 0.5,0 0.866025,0
    finmeas equilibrate --n 4 --samples 10 --seed 7 --out runs/eq
    finmeas reverse --config runs/rev/manifest.json

Settings merge as manifest defaults < ``--config`` JSON < command-line
flags; ``FINMEAS_SEED`` overrides the seed. Each run writes
``manifest.json``, ``rows.csv`` and ``summary.json`` to ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from finmeas import __version__
from finmeas.errors import (
    DegenerateSpectrumError,
    FinmeasError,
    InvalidParameterError,
    NumericInputError,
)
from finmeas.experiments import ExperimentManifest, run_manifest
from finmeas.model import SpinState

log = logging.getLogger("finmeas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SUBCOMMANDS = ("equilibrate", "typicality", "reverse", "born", "analytic", "selftest")
BORN_DEFAULT_SIZES = (4, 6, 8, 10)


class ConfigError(Exception):
    pass


def _complex_pair(text: str) -> list[float]:
    parts = text.split(",")
    try:
        if len(parts) == 1:
            return [float(parts[0]), 0.0]
        if len(parts) == 2:
            return [float(parts[0]), float(parts[1])]
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected 're,im', got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with flat keys (e.g. a previous manifest.json)")
    common.add_argument("--n", dest="N", type=int, help="number of apparatus spins (even)")
    common.add_argument("--epsilon", type=float, help="perturbation strength")
    common.add_argument("--spin", nargs=2, type=_complex_pair, metavar="RE,IM",
                        help="amplitudes c+ and c- as re,im pairs")
    common.add_argument("--samples", dest="n_samples", type=int, help="ensemble size")
    common.add_argument("--seed", type=int, help="root seed (FINMEAS_SEED overrides)")
    common.add_argument("--tmin", type=float)
    common.add_argument("--tmax", type=float)
    common.add_argument("--tpoints", type=int)
    common.add_argument("--log", dest="log", action="store_true", help="logarithmic time grid")
    common.add_argument("--linear", dest="log", action="store_false", help="linear time grid")
    common.add_argument("--metric", choices=("trace", "frobenius"))
    common.add_argument("--delta", type=float, help="typicality deviation threshold")
    common.add_argument("--epsilon-list", dest="epsilon_list", type=_float_list)
    common.add_argument("--n-list", dest="n_list", type=_int_list)
    common.add_argument("--T", dest="T", type=float, help="reversal time (default: 10x plateau onset)")
    common.add_argument("--n-h0", dest="n_h0", type=int, help="bare Hamiltonians in equilibrate")
    common.add_argument("--max-n", dest="max_n", type=int, help="largest allowed N")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (0 = auto)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="finmeas", description="Finite-resource quantum measurement experiments.")
    parser.add_argument("--version", action="version", version=f"finmeas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "equilibrate": "distance of the V-averaged state to the averaged equilibrium state",
        "typicality": "spread of equilibrium probabilities over (H0, V) draws",
        "reverse": "evolve forward, reverse with a different perturbation",
        "born": "Monte-Carlo vs closed-form outcome probabilities across N",
        "analytic": "closed-form probabilities, states and bounds",
        "selftest": "run the oracle checks",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


_RUNTIME_KEYS = {"config", "out", "threads", "verbose", "command"}


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    if "version" in data and data["version"] != __version__:
        log.warning("config written by finmeas %s, running %s", data["version"], __version__)
    data.pop("version", None)
    data.pop("experiment", None)
    return data


def merge_settings(command: str, flags: dict, env: dict | None = None) -> dict:
    """Manifest keyword arguments from config file, flags and environment."""
    env = os.environ if env is None else env
    settings: dict = {}
    if "config" in flags:
        settings.update(load_config(flags["config"]))
    settings.update({k: v for k, v in flags.items() if k not in _RUNTIME_KEYS})
    if env.get("FINMEAS_SEED"):
        try:
            settings["seed"] = int(env["FINMEAS_SEED"])
        except ValueError:
            raise ConfigError(f"FINMEAS_SEED must be an integer, got {env['FINMEAS_SEED']!r}") from None
    if "spin" in settings:
        settings["spin"] = _normalize_spin(settings["spin"])
    if command == "born" and not settings.get("n_list"):
        settings["n_list"] = list(BORN_DEFAULT_SIZES)
    return settings


def _normalize_spin(pairs) -> list[list[float]]:
    try:
        (pr, pi), (mr, mi) = pairs
    except (TypeError, ValueError):
        raise ConfigError(f"spin must be two [re, im] pairs, got {pairs!r}") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = SpinState.normalized(complex(pr, pi), complex(mr, mi))
    for w in caught:
        log.warning("%s", w.message)
    return [[s.c_plus.real, s.c_plus.imag], [s.c_minus.real, s.c_minus.imag]]


def _print_analytic(record) -> None:
    for N, entry in record.aggregates["per_N"].items():
        print(f"N={N} d0={entry['d0']} d1={entry['d1']}")
        print(f"  p(+1) = {entry['p_plus']:.6f}")
        print(f"  p(-1) = {entry['p_minus']:.6f}")
        print(f"  p(0)  = {entry['p_zero']:.6f}  ({entry['p_zero_exact']})")
        print(f"  equilibration bound (+1/-1) = {entry['bound_plus']:.6g} / {entry['bound_minus']:.6g}")
        print(f"  trace distance to large-N limit state = {entry['distance_to_limit_state']:.6f}")
        print("  averaged equilibrium state = mixture of:")
        for row in entry["table"]:
            label = {1: "+1", -1: "-1", 0: " 0"}[row["outcome"]]
            print(f"    outcome {label}: weight {row['probability']:.6f}")


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    flags = {k: v for k, v in vars(args).items() if k != "command"}
    logging.basicConfig(level=logging.INFO if flags.get("verbose") else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    command = args.command

    if command == "selftest":
        from finmeas.selftest import run_selftest

        try:
            results = run_selftest()
        except FinmeasError as exc:
            print(f"selftest error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC

    try:
        settings = merge_settings(command, flags)
        manifest = ExperimentManifest(experiment=command, **settings)
        out = Path(flags.get("out", os.path.join("finmeas-out", command)))
        _check_writable(out)
    except (ConfigError, InvalidParameterError, TypeError, ValueError) as exc:
        print(f"finmeas: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        with np.errstate(divide="raise", over="raise", invalid="raise"):
            record = run_manifest(manifest, threads=flags.get("threads", 1))
    except InvalidParameterError as exc:
        print(f"finmeas: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateSpectrumError, NumericInputError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"finmeas: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    try:
        record.write(out)
    except OSError as exc:
        print(f"finmeas: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if command == "analytic":
        _print_analytic(record)
    else:
        print(json.dumps({"experiment": command, "rows": len(record.rows), "out": str(out),
                          "resamples": record.resamples, "wall_time": round(record.wall_time, 3)}))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
