import json
import logging
import os
import subprocess
import sys

import pytest

from finmeas import cli
from finmeas.errors import DegenerateSpectrumError


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv("FINMEAS_SEED", raising=False)


def test_analytic_prints_summary(capsys, tmp_path):
    code = cli.run(["analytic", "--n", "8", "--spin", "0.5,0", "0.866025,0", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "71/164" in out and "p(0)  = 0.432927" in out
    assert (tmp_path / "manifest.json").exists()


def test_selftest_exits_cleanly(capsys):
    assert cli.run(["selftest"]) == 0
    out = capsys.readouterr().out
    for name in ("haar_fourth_moment", "pap_average", "block_vs_full_space", "dephasing_vs_quadrature"):
        assert f"PASS {name}" in out


def test_equilibrate_twice_gives_identical_rows(tmp_path):
    args = ["equilibrate", "--n", "4", "--samples", "10", "--seed", "7", "--tpoints", "20"]
    assert cli.run(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.run(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "rows.csv").read_bytes() == (tmp_path / "b" / "rows.csv").read_bytes()


def test_manifest_round_trip_via_config(tmp_path):
    first = tmp_path / "first"
    assert cli.run(["reverse", "--n", "4", "--samples", "4", "--epsilon-list", "0,0.3",
                    "--T", "3", "--out", str(first)]) == 0
    second = tmp_path / "second"
    assert cli.run(["reverse", "--config", str(first / "manifest.json"), "--out", str(second)]) == 0
    assert (first / "rows.csv").read_bytes() == (second / "rows.csv").read_bytes()
    assert (first / "manifest.json").read_bytes() == (second / "manifest.json").read_bytes()


def test_flags_override_config_and_env_overrides_seed(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"N": 6, "seed": 1, "n_samples": 70}))
    settings = cli.merge_settings("typicality", {"config": str(cfg), "n_samples": 80}, env={})
    assert settings == {"N": 6, "seed": 1, "n_samples": 80}
    settings = cli.merge_settings("typicality", {"config": str(cfg)}, env={"FINMEAS_SEED": "9"})
    assert settings["seed"] == 9


def test_env_seed_reaches_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv("FINMEAS_SEED", "123")
    assert cli.run(["born", "--n-list", "4", "--samples", "5", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 123


def test_born_default_sizes():
    assert cli.merge_settings("born", {}, env={})["n_list"] == [4, 6, 8, 10]


def test_spin_is_renormalized_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="finmeas"):
        settings = cli.merge_settings("analytic", {"spin": [[1.0, 0.0], [1.0, 0.0]]}, env={})
    assert settings["spin"][0][0] == pytest.approx(2 ** -0.5)
    assert any("renormalized" in r.message for r in caplog.records)


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["analytic", "--bogus"],
    ["analytic", "--spin", "a,b", "0,1"],
    ["analytic", "--n", "5"],
    ["analytic", "--metric", "l1"],
    ["typicality", "--samples", "3"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert cli.run(argv + ["--out", str(tmp_path)] if argv[0] != "frobnicate" else argv) == 2


def test_missing_config_file_exits_2(tmp_path):
    assert cli.run(["analytic", "--config", str(tmp_path / "nope.json")]) == 2


def test_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.run(["analytic", "--out", str(blocker / "sub")]) == 2


def test_numeric_failure_exits_3(monkeypatch, tmp_path):
    def boom(*a, **k):
        raise DegenerateSpectrumError(0.0, 1e-9)

    monkeypatch.setattr(cli, "run_manifest", boom)
    assert cli.run(["typicality", "--out", str(tmp_path)]) == 3


def test_module_entry_point(tmp_path):
    env = {k: v for k, v in os.environ.items() if k != "FINMEAS_SEED"}
    proc = subprocess.run([sys.executable, "-m", "finmeas", "analytic", "--n", "4", "--out", str(tmp_path)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "7/12" in proc.stdout
