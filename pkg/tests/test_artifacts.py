import numpy as np
import pytest

from boussinesq_control import artifacts
from boussinesq_control.mesh import SegmentTag
from boussinesq_control.optimizer import IterationRecord
from boussinesq_control.state import solve_state

from conftest import random_control


def test_fmt_round_trip():
    for v in (0.1, 1 / 3, -2.5e-300, 1e20):
        assert float(artifacts.fmt(v)) == v
        assert float(artifacts.fmt(np.float64(v))) == v
    assert artifacts.fmt(np.int64(7)) == "7"
    assert artifacts.fmt(None) == ""


def test_history_seconds_blank_by_default(tmp_path):
    hist = [IterationRecord(0, 1.0, 1.0, 0.0, 0.25), IterationRecord(1, 0.5, 0.1, 0.7, 0.5)]
    header, body = artifacts.read_csv(artifacts.write_history(tmp_path / "h.csv", hist))
    assert header == ["k", "J", "grad_rel", "rho", "seconds"]
    assert np.all(np.isnan(body[:, 4])) and body[1, 3] == 0.7
    _, body = artifacts.read_csv(artifacts.write_history(tmp_path / "h2.csv", hist, True))
    assert body[1, 4] == 0.5


def test_segment_arclength_square(ex1_small):
    fine = ex1_small.pair.fine
    order, s = artifacts.segment_arclength(fine, ex1_small.control_tags[0])
    assert s[0] == 0.0 and np.all(np.diff(s) > 0)
    assert s[-1] == pytest.approx(1.0)


def test_segment_arclength_mirrored_walls(ex2_small):
    fine = ex2_small.pair.fine
    left, sl = artifacts.segment_arclength(fine, SegmentTag.SIDE_WALL_LEFT)
    right, sr = artifacts.segment_arclength(fine, SegmentTag.SIDE_WALL_RIGHT)
    assert np.allclose(sl, sr)
    assert np.allclose(fine.nodes[left, 1], fine.nodes[right, 1])
    assert np.allclose(fine.nodes[left, 0], 1 - fine.nodes[right, 0])


def test_controls_layout(tmp_path, ex2_small, rng):
    u = random_control(ex2_small, rng)
    paths = artifacts.write_controls(tmp_path, ex2_small, u)
    assert [p.name for p in paths] == [f"control_{t.value}.csv" for t in ex2_small.control_tags]
    total = 0
    for p in paths:
        header, body = artifacts.read_csv(p)
        assert header[0] == "t" and all(h.startswith("s=") for h in header[1:])
        assert body.shape == (ex2_small.N, len(header))
        assert np.allclose(body[:, 0], [ex2_small.time(k) for k in range(1, ex2_small.N + 1)])
        total += len(header) - 1
    assert total == ex2_small.control.shape[1]
    assert np.isclose(np.sort(np.concatenate(
        [artifacts.read_csv(p)[1][0, 1:] for p in paths])), np.sort(u[0])).all()


def test_gradient_rows(tmp_path, ex1_small, rng):
    g = random_control(ex1_small, rng)
    path = artifacts.write_gradient(tmp_path / "g.csv", ex1_small, g)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,t,segment,s,g"
    assert len(lines) == 1 + g.size
    values = sorted(float(line.split(",")[-1]) for line in lines[1:])
    assert np.allclose(values, np.sort(g.ravel()))


def test_interpolate_pressure_linear(ex2_small):
    pair = ex2_small.pair
    xy = pair.coarse.nodes
    p = 2 * xy[:, 0] - 3 * xy[:, 1] + 1
    out = artifacts.interpolate_pressure(pair, p)
    fx = pair.fine.nodes
    assert np.allclose(out, 2 * fx[:, 0] - 3 * fx[:, 1] + 1)


def test_snapshots(tmp_path, ex1_small):
    state = solve_state(ex1_small, ex1_small.control.zeros())
    paths = artifacts.write_snapshots(tmp_path, ex1_small, state, stride=3)
    assert [p.name for p in paths] == [f"snapshot_{k:05d}.csv" for k in (0, 3, 6, 8)]
    header, body = artifacts.read_csv(paths[-1])
    assert header == ["x", "y", "y1", "y2", "theta", "p"]
    n = ex1_small.pair.fine.n_nodes
    assert body.shape == (n, 6)
    assert np.allclose(body[:, 2], state.y[8][:n]) and np.allclose(body[:, 4], state.theta[8])
    with pytest.raises(ValueError):
        artifacts.write_snapshots(tmp_path, ex1_small, state, stride=0)


def test_writes_are_deterministic(tmp_path, ex1_small, rng):
    u = random_control(ex1_small, rng)
    a = artifacts.write_controls(tmp_path / "a", ex1_small, u)
    b = artifacts.write_controls(tmp_path / "b", ex1_small, u)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
