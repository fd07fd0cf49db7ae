import subprocess
import sys

import numpy as np
import pytest

from boussinesq_control import cli, oracle
from boussinesq_control.artifacts import read_csv
from boussinesq_control.mesh import read_mesh


def test_config_round_trip():
    cfg = cli.RunConfig(preset="example2", n=18, nt=40, T=3.0, alpha=0.05, Pr=0.7, Ra=500.0,
                        objective="vorticity", m=3, tol=1e-4, max_step=2.0, timings=True)
    assert cli.parse_config(cfg.to_ini()) == cfg.validate()


@pytest.mark.parametrize("text, path", [
    ("[problem]\nn = 7\n", "problem.n"),
    ("[problem]\npreset = example2\nn = 8\n", "problem.n"),
    ("[problem]\nalpha = -1\n", "problem.alpha"),
    ("[problem]\nbogus = 1\n", "problem.bogus"),
    ("[extra]\n", "extra"),
    ("[problem]\npreset = custom\n", "problem.geometry"),
    ("[problem]\nnu1 = 0.1\nPr = 0.7\nRa = 100\n", "problem"),
])
def test_config_errors_name_field(text, path):
    with pytest.raises(cli.ConfigError, match=path):
        cli.parse_config(text)


def test_memory_defaults():
    assert cli.RunConfig(preset="example1").memory() == 1
    assert cli.RunConfig(preset="example2").memory() == 5
    assert cli.RunConfig(preset="example2", m=2).memory() == 2


def test_exit_code_config(tmp_path, capsys):
    assert cli.main(["run", "example1", "--n", "7", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "problem.n" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG


def test_exit_code_gradcheck_guard(tmp_path):
    code = cli.main(["gradcheck", "example1", "--n", "64", "--nt", "2", "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG


def test_gradcheck_passes(tmp_path, capsys):
    code = cli.main(["gradcheck", "example1", "--n", "8", "--nt", "8", "--directions", "2",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    assert capsys.readouterr().out.endswith("passed\n")
    assert (tmp_path / "gradcheck.csv").exists()


def test_gradcheck_failure_exit_code(tmp_path, monkeypatch):
    bad = oracle.FdCheckReport([oracle.DirectionReport(
        0, np.array([1e-2]), np.array([1.0]), 2.0, np.array([0.5]))])
    monkeypatch.setattr(oracle, "fd_gradient_check", lambda *a, **k: bad)
    code = cli.main(["gradcheck", "example1", "--n", "8", "--nt", "2", "--out", str(tmp_path)])
    assert code == cli.EXIT_GRADCHECK


def test_mesh_dump(tmp_path):
    assert cli.main(["mesh-dump", "example2", "--n", "6", "--out", str(tmp_path)]) == 0
    coarse = read_mesh(tmp_path / "coarse.mesh")
    fine = read_mesh(tmp_path / "fine.mesh")
    assert fine.n_triangles == 4 * coarse.n_triangles


def _run(tmp_path, name):
    out = tmp_path / name
    code = cli.main(["run", "example1", "--n", "16", "--nt", "32", "--max-iter", "3",
                     "--snapshot-stride", "8", "--control-every", "2", "--out", str(out)])
    assert code == 0
    return out


def test_run_artifacts_and_determinism(tmp_path):
    a = _run(tmp_path, "a")
    for name in ("config.ini", "history.csv", "control_Left.csv", "tracking_error.csv",
                 "vorticity.csv", "summary.txt"):
        assert (a / name).exists(), name
    assert sorted(p.name for p in (a / "snapshots").iterdir()) == [
        f"snapshot_{k:05d}.csv" for k in (0, 8, 16, 24, 32)]
    assert (a / "controls" / "iter_0002" / "control_Left.csv").exists()
    header, hist = read_csv(a / "history.csv")
    assert hist.shape[0] == 4 and np.all(np.diff(hist[:, 1]) < 0)
    # the saved config reproduces the run
    assert cli.load_config(a / "config.ini").n == 16
    b = _run(tmp_path, "b")
    for p in sorted(a.rglob("*.csv")):
        assert p.read_bytes() == (b / p.relative_to(a)).read_bytes(), p.name


def test_baseline_matches_zero_control(tmp_path):
    out = cli.uncontrolled_baseline(cli.RunConfig(preset="example1", n=8, nt=8, T=1.0,
                                                  dir=str(tmp_path)))
    _, err = read_csv(tmp_path / "tracking_error.csv")
    assert err.shape == (8, 2) and np.all(err[:, 1] == 1.0)
    setup = out["setup"]
    from boussinesq_control.state import evaluate_objective, solve_state
    u = setup.control.zeros()
    assert out["J"] == evaluate_objective(setup, solve_state(setup, u), u)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "boussinesq_control", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout
