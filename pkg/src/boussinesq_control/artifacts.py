"""Plot-ready CSV output.

Every file starts with a header row.  Floats are written with ``repr``
(shortest round-trip form), so identical runs give identical bytes.  Wall
clock times are left blank unless explicitly requested, because they would
break that property.

Schemas (version 1):

``history.csv``
    ``k,J,grad_rel,rho,seconds``
``control_<Segment>.csv``
    ``t`` followed by one column per boundary node named ``s=<arc length>``;
    one row per time level 1..N.
``tracking_error.csv``
    ``t,rel_error``: ||y - y_d|| / ||y_d|| in L2.
``vorticity.csv``
    ``t,curl_l2,curl_sq``: ||curl y|| and its square.
``snapshot_<step>.csv``
    ``x,y,y1,y2,theta,p`` at fine nodes; ``p`` is interpolated from the
    coarse mesh.
``gradient.csv``
    ``step,t,segment,s,g``.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .mesh import Mesh, MeshPair, SegmentTag

__all__ = [
    "SCHEMA_VERSION",
    "fmt",
    "segment_arclength",
    "write_history",
    "write_controls",
    "write_tracking_error",
    "write_vorticity",
    "write_snapshots",
    "write_gradient",
    "interpolate_pressure",
    "read_csv",
]

SCHEMA_VERSION = 1


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write(path, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, np.ndarray]:
    """Header and numeric body of a CSV written by this module (blanks become NaN)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    body = [[float(v) if v != "" else np.nan for v in r] for r in rows[1:]]
    return rows[0], np.array(body, dtype=float)


def segment_arclength(mesh: Mesh, tag: SegmentTag) -> tuple[np.ndarray, np.ndarray]:
    """Nodes of one boundary segment in walking order and their arc length.

    The walk starts at the endpoint with the smallest ``(y, x)``, so the two
    side walls of a mirror-symmetric domain are parametrized alike.
    """
    edges = mesh.edges_with_tag(tag)
    if len(edges) == 0:
        raise ValueError(f"no boundary edges tagged {tag.value}")
    adjacency: dict = {}
    for a, b in edges.tolist():
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)
    ends = [k for k, nb in adjacency.items() if len(nb) == 1]
    if len(ends) != 2:
        raise ValueError(f"segment {tag.value} is not a simple open chain")
    start = min(ends, key=lambda k: (mesh.nodes[k, 1], mesh.nodes[k, 0]))
    order = [start]
    prev = None
    while len(order) < len(adjacency):
        nxt = [k for k in adjacency[order[-1]] if k != prev]
        prev = order[-1]
        order.append(nxt[0])
    order = np.array(order)
    steps = np.linalg.norm(np.diff(mesh.nodes[order], axis=0), axis=1)
    return order, np.concatenate([[0.0], np.cumsum(steps)])


def write_history(path, history, with_seconds: bool = False) -> Path:
    rows = ((r.k, r.J, r.grad_rel, r.rho, r.seconds if with_seconds else None)
            for r in history)
    return _write(path, ["k", "J", "grad_rel", "rho", "seconds"], rows)


def _segment_columns(setup, tag):
    order, s = segment_arclength(setup.pair.fine, tag)
    pos = {int(nd): i for i, nd in enumerate(setup.control.nodes)}
    return np.array([pos[int(k)] for k in order]), s


def write_controls(outdir, setup, u) -> list:
    """One grid file per control segment: rows are time levels, columns nodes."""
    u = setup.control.check(u)
    paths = []
    for tag in setup.control_tags:
        cols, s = _segment_columns(setup, tag)
        header = ["t"] + [f"s={fmt(v)}" for v in s]
        rows = ([setup.time(k)] + list(u[k - 1, cols]) for k in range(1, setup.N + 1))
        paths.append(_write(Path(outdir) / f"control_{tag.value}.csv", header, rows))
    return paths


def write_tracking_error(path, setup, series) -> Path:
    rows = ((setup.time(k), series[k - 1]) for k in range(1, setup.N + 1))
    return _write(path, ["t", "rel_error"], rows)


def write_vorticity(path, setup, series) -> Path:
    rows = ((setup.time(k), series[k - 1], series[k - 1] ** 2) for k in range(1, setup.N + 1))
    return _write(path, ["t", "curl_l2", "curl_sq"], rows)


def interpolate_pressure(pair: MeshPair, p_coarse: np.ndarray) -> np.ndarray:
    """P1 interpolation of a coarse nodal field onto the fine nodes."""
    out = np.empty(pair.fine.n_nodes)
    out[pair.coarse_node_embed] = p_coarse
    for (a, b), mid in pair.edge_midpoint_map.items():
        out[mid] = 0.5 * (p_coarse[a] + p_coarse[b])
    return out


def write_snapshots(outdir, setup, state, stride: int = 1,
                    steps: Optional[Iterable[int]] = None) -> list:
    """Nodal state files for every ``stride``-th level (and always the last)."""
    if stride < 1:
        raise ValueError("snapshot stride must be at least 1")
    if steps is None:
        steps = sorted(set(range(0, setup.N + 1, stride)) | {setup.N})
    fine = setup.pair.fine
    n = fine.n_nodes
    paths = []
    for k in steps:
        p = interpolate_pressure(setup.pair, state.p[k])
        y = state.y[k]
        rows = zip(fine.nodes[:, 0], fine.nodes[:, 1], y[:n], y[n:], state.theta[k], p)
        paths.append(_write(Path(outdir) / f"snapshot_{k:05d}.csv",
                            ["x", "y", "y1", "y2", "theta", "p"], rows))
    return paths


def write_gradient(path, setup, g) -> Path:
    g = setup.control.check(g)
    segments = [(tag, *_segment_columns(setup, tag)) for tag in setup.control_tags]

    def rows():
        for k in range(1, setup.N + 1):
            for tag, cols, s in segments:
                for c, sv in zip(cols, s):
                    yield k, setup.time(k), tag.value, sv, g[k - 1, c]

    return _write(path, ["step", "t", "segment", "s", "g"], rows())
