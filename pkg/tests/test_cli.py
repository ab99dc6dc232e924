import json
import subprocess
import sys

import numpy as np
import pytest

from bilevel_topp.cli import main

SCENARIO = """
name = "cli"
N = 36
seed = 2

[model]
type = "planar3r"
lengths = [2.0, 1.5, 1.0]

[limits]
velocity = [1.75, 1.57, 1.0]
acceleration = [35.0, 31.4, 20.0]

[optimizer]
alpha = 1e-4
beta = 0.01
iterations = 8
window = 0
"""


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "cli.toml"
    path.write_text(SCENARIO)
    return path


def test_gen_path(tmp_path, capsys):
    out = tmp_path / "edge.csv"
    assert main(["gen-path", "--points", "101", "--out", str(out)]) == 0
    pts = np.loadtxt(out, delimiter=",")
    assert pts.shape == (101, 2)
    assert "101 points" in capsys.readouterr().out
    line = tmp_path / "line.csv"
    assert main(["gen-path", "--points", "11", "--out", str(line),
                 "--control-points", "0", "0", "1", "1", "2", "2", "3", "3"]) == 0
    pts = np.loadtxt(line, delimiter=",")
    np.testing.assert_allclose(pts[:, 0], pts[:, 1], atol=1e-12)


def test_validate(scenario, capsys):
    assert main(["validate", str(scenario)]) == 0
    assert "N=36" in capsys.readouterr().out
    assert main(["validate", str(scenario), "--check-init"]) == 0
    assert "max core error" in capsys.readouterr().out


def test_invalid_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(SCENARIO.replace("acceleration = [35.0, 31.4, 20.0]", ""))
    assert main(["validate", str(bad)]) == 2
    assert "limits.acceleration" in capsys.readouterr().err


def test_unknown_set_key(scenario, capsys):
    assert main(["validate", str(scenario), "--set", "gamma=1"]) == 2
    assert "--set" in capsys.readouterr().err


def test_solve_inner(scenario, tmp_path):
    out = tmp_path / "inner"
    assert main(["solve-inner", str(scenario), "--out", str(out)]) == 0
    doc = json.loads((out / "inner.json").read_text())
    assert doc["seed"] == 2 and len(doc["s2"]) == 37
    assert doc["t_f"] == pytest.approx(doc["V"] ** 0.5)
    assert main(["solve-inner", str(scenario), "--out", str(out), "--mode", "no-acc"]) == 0
    assert json.loads((out / "inner.json").read_text())["mode"] == "no_acc"


def test_optimize_export_and_validate_report(scenario, tmp_path, capsys):
    out = tmp_path / "opt"
    assert main(["optimize", str(scenario), "--out", str(out), "--seed", "5", "--iterations", "6"]) == 0
    report = out / "report.json"
    doc = json.loads(report.read_text())
    assert doc["runs"][0]["seed"] == 5 and doc["config"]["max_iters"] == 6
    assert len(doc["runs"][0]["history"]["t_f"]) == 7
    assert "feasible" in capsys.readouterr().out
    assert main(["validate", str(scenario), "--report", str(report)]) == 0
    exp = tmp_path / "exp"
    assert main(["export-traj", str(scenario), "--report", str(report), "--out", str(exp),
                 "--dt", "0.01"]) == 0
    traj = np.loadtxt(exp / "traj_0.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(np.diff(traj[:-1, 0]), 0.01)
    assert main(["export-traj", str(scenario), "--report", str(report), "--run", "3",
                 "--out", str(exp)]) == 2


def test_batch_and_overrides(scenario, tmp_path, capsys):
    out = tmp_path / "batch"
    code = main(["batch", str(scenario), "--runs", "2", "--out", str(out), "--N", "40",
                 "--alpha", "2e-4", "--beta", "0.02", "--set", "cap=0.02", "--mode", "const-speed"])
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    cfg = doc["config"]
    assert (cfg["N"], cfg["alpha"], cfg["beta"], cfg["cap"], cfg["mode"]) == (40, 2e-4, 0.02, 0.02, "const_speed")
    assert "improvement" in capsys.readouterr().out


def test_infeasible_result_exit_code(scenario, tmp_path):
    # a cap below the fit residual cannot be met by any iterate
    assert main(["optimize", str(scenario), "--out", str(tmp_path), "--set", "cap=1e-9",
                 "--iterations", "2"]) == 1


def test_env_var_output_dir(scenario, tmp_path, monkeypatch):
    monkeypatch.setenv("BILEVEL_TOPP_OUT", str(tmp_path / "envout"))
    assert main(["solve-inner", str(scenario)]) == 0
    assert (tmp_path / "envout" / "inner.json").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "bilevel_topp", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("solve-inner", "optimize", "batch", "validate", "export-traj", "gen-path"):
        assert cmd in res.stdout
