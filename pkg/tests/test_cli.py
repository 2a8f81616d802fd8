import json

import pytest

from chaosfilt import cli, harness, theory
from chaosfilt.errors import DivergenceError

SMALL = ["--set", "model.J=12", "--set", "assimilation.epsilon=0.01", "--set", "init.spinup_T=5",
         "--set", "assimilation.T_end=1"]


def run(*argv):
    return cli.main(list(argv))


def test_simulate_writes_outputs(tmp_path, capsys):
    assert run("simulate", *SMALL, "--out", str(tmp_path)) == 0
    assert (tmp_path / "truth.csv").read_text().startswith("t,v0,")
    assert (tmp_path / "truth.png").stat().st_size > 0
    assert json.loads(capsys.readouterr().out)["steps"] == 10


def test_experiment_outputs(tmp_path):
    code = run("experiment", *SMALL, "--set", "filter.kind=exkf", "--realizations", "2",
               "--out", str(tmp_path))
    assert code == 0
    for name in ("rmse.csv", "rank.csv", "summary.json", "rmse.png", "rank.png"):
        assert (tmp_path / name).exists(), name
    assert json.loads((tmp_path / "summary.json").read_text())["I"] == 2


def test_filter_and_no_figures(tmp_path):
    assert run("filter", *SMALL, "--realization", "1", "--no-figures", "--out", str(tmp_path)) == 0
    assert (tmp_path / "trace.csv").exists() and not (tmp_path / "trace.png").exists()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model.J = 12\ninit.spinup_T = 5\nassimilation.T_end = 0.5\n")
    assert run("simulate", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "o")) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["seed"] == 4


def test_sweep(tmp_path):
    code = run("sweep", *SMALL, "--M", "3,6", "--realizations", "1", "--out", str(tmp_path))
    assert code == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0] == "filter,M,avg_rmse,divergences,I" and len(rows) == 3
    assert (tmp_path / "sweep.png").exists()


def test_lyapunov(tmp_path):
    code = run("lyapunov", "--set", "model.J=8", "--set", "lyapunov.t_total=30",
               "--set", "lyapunov.transient=5", "--out", str(tmp_path))
    assert code == 0
    assert json.loads((tmp_path / "lyapunov.json").read_text())["sum"] == pytest.approx(-8, rel=1e-6)
    assert len((tmp_path / "exponents.csv").read_text().splitlines()) == 9


def test_verify_pass(tmp_path):
    assert run("verify", "--theorem", "discrete-sync", "--out", str(tmp_path)) == 0
    assert json.loads((tmp_path / "verify-discrete-sync.json").read_text())["pass"] is True


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["simulate", "--set", "nokey"],
    ["simulate", "--set", "model.unknown=1"],
    ["simulate", "--config", "/nonexistent/config.json"],
    ["sweep", "--M", "a,b"],
    ["verify", "--theorem", "nope"],
    [],
])
def test_usage_errors_exit_1(argv, tmp_path):
    assert cli.main(argv) == 1


def test_help_exits_0():
    assert run("--help") == 0


def test_diverged_filter_exits_2(monkeypatch, tmp_path):
    def boom(fc, y, H, cfg):
        raise DivergenceError("forced", step=fc.k)

    monkeypatch.setattr(harness, "analyse", boom)
    assert run("filter", *SMALL, "--out", str(tmp_path / "f")) == 2
    assert run("experiment", *SMALL, "--realizations", "2", "--out", str(tmp_path / "e")) == 2
    assert json.loads((tmp_path / "e" / "summary.json").read_text())["all_diverged"] is True


def test_verification_failure_exits_3(monkeypatch):
    monkeypatch.setitem(theory.THEOREMS, "discrete-sync",
                        lambda: {"name": "discrete-sync", "pass": False, "margin": -1.0})
    assert run("verify", "--theorem", "discrete-sync") == 3
