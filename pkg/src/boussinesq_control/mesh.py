"""Structured triangulations of the two model geometries.

Every geometry is built as a coarse mesh (pressure, size H) together with its
midpoint refinement (velocity, temperature and control, size h = H/2).  Fine
node numbering keeps the coarse nodes first so that coarse-to-fine
prolongation is an index embedding.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SegmentTag",
    "Mesh",
    "MeshPair",
    "MeshError",
    "build_unit_square",
    "build_reactor",
    "refine_midpoint",
    "write_mesh",
    "read_mesh",
]

_GEOM_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh construction parameters or an inconsistent mesh."""


class SegmentTag(enum.Enum):
    # cavity (first example)
    LEFT = "Left"
    RIGHT = "Right"
    TOP = "Top"
    BOTTOM = "Bottom"
    # reactor (second example)
    SUSCEPTOR = "Susceptor"
    SIDE_WALL_LEFT = "SideWallLeft"
    SIDE_WALL_RIGHT = "SideWallRight"
    INLET_WALL = "InletWall"
    INLET = "Inlet"
    OUTLET_LEFT = "OutletLeft"
    OUTLET_RIGHT = "OutletRight"

    def mirrored(self) -> "SegmentTag":
        """Tag seen after the reflection x -> 1 - x."""
        return _MIRROR.get(self, self)


_MIRROR = {
    SegmentTag.LEFT: SegmentTag.RIGHT,
    SegmentTag.RIGHT: SegmentTag.LEFT,
    SegmentTag.SIDE_WALL_LEFT: SegmentTag.SIDE_WALL_RIGHT,
    SegmentTag.SIDE_WALL_RIGHT: SegmentTag.SIDE_WALL_LEFT,
    SegmentTag.OUTLET_LEFT: SegmentTag.OUTLET_RIGHT,
    SegmentTag.OUTLET_RIGHT: SegmentTag.OUTLET_LEFT,
}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with tagged boundary edges.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
    triangles : (n_tri, 3) int array, counter-clockwise
    boundary_edges : (n_bnd, 2) int array, oriented with the domain on the left
    boundary_tags : tuple of SegmentTag, one per boundary edge
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def tags(self) -> set:
        return set(self.boundary_tags)

    def edges_with_tag(self, *tags: SegmentTag) -> np.ndarray:
        """Boundary edges (node pairs) carrying any of ``tags``."""
        wanted = set(tags)
        unknown = wanted - self.tags()
        if unknown:
            names = ", ".join(sorted(t.value for t in unknown))
            raise MeshError(f"unknown boundary tag(s) on this mesh: {names}")
        mask = np.array([t in wanted for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]

    def nodes_with_tag(self, *tags: SegmentTag) -> np.ndarray:
        """Sorted unique nodes lying on edges with any of ``tags``."""
        return np.unique(self.edges_with_tag(*tags).ravel())

    def tag_length(self, *tags: SegmentTag) -> float:
        e = self.edges_with_tag(*tags)
        d = self.nodes[e[:, 1]] - self.nodes[e[:, 0]]
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def validate(self) -> None:
        """Check the structural invariants; raise MeshError on violation."""
        if np.any(self.signed_areas() <= 0.0):
            raise MeshError("mesh has triangles with non-positive signed area")
        if len(self.boundary_tags) != self.boundary_edges.shape[0]:
            raise MeshError("one tag per boundary edge is required")
        # boundary edges must be exactly the edges used by a single triangle
        # and must form closed loops (one incoming and one outgoing per node)
        expected = _free_edges(self.triangles)
        given = {tuple(e) for e in self.boundary_edges.tolist()}
        if given != set(expected):
            raise MeshError("boundary edges do not cover the domain boundary")
        out_deg = np.bincount(self.boundary_edges[:, 0], minlength=self.n_nodes)
        in_deg = np.bincount(self.boundary_edges[:, 1], minlength=self.n_nodes)
        if np.any(out_deg != in_deg) or np.any(out_deg > 1):
            raise MeshError("boundary edges do not form simple closed loops")


@dataclass(frozen=True, eq=False)
class MeshPair:
    """Coarse mesh and its midpoint refinement.

    ``parent[t]`` is the coarse triangle containing fine triangle ``t``;
    ``coarse_node_embed[i]`` is the fine index of coarse node ``i`` and
    ``edge_midpoint_map`` maps a sorted coarse edge to its fine midpoint node.
    """

    coarse: Mesh
    fine: Mesh
    parent: np.ndarray
    coarse_node_embed: np.ndarray
    edge_midpoint_map: dict = field(repr=False)
    name: str = "custom"

    @property
    def h(self) -> float:
        """Largest fine edge length."""
        return _max_edge_length(self.fine)

    @property
    def H(self) -> float:
        return _max_edge_length(self.coarse)


def _max_edge_length(mesh: Mesh) -> float:
    p = mesh.nodes[mesh.triangles]
    lengths = [np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)]
    return float(np.max(lengths))


def _free_edges(triangles: np.ndarray) -> list:
    """Directed edges that belong to exactly one triangle."""
    directed = []
    for a, b, c in triangles.tolist():
        directed.extend(((a, b), (b, c), (c, a)))
    count: dict = {}
    for a, b in directed:
        key = (a, b) if a < b else (b, a)
        count[key] = count.get(key, 0) + 1
    return [e for e in directed if count[(min(e), max(e))] == 1]


def refine_midpoint(coarse: Mesh):
    """Split every triangle into four by joining its edge midpoints.

    Returns
    -------
    fine : Mesh
    maps : dict with keys ``parent``, ``coarse_node_embed``, ``edge_midpoint_map``
    """
    coarse.validate()
    n0 = coarse.n_nodes
    midpoint: dict = {}
    new_nodes = []

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        idx = midpoint.get(key)
        if idx is None:
            idx = n0 + len(new_nodes)
            midpoint[key] = idx
            new_nodes.append(0.5 * (coarse.nodes[a] + coarse.nodes[b]))
        return idx

    tris = []
    for a, b, c in coarse.triangles.tolist():
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris.extend(((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)))

    edges, tags = [], []
    for (a, b), tag in zip(coarse.boundary_edges.tolist(), coarse.boundary_tags):
        m = midpoint[(min(a, b), max(a, b))]
        edges.extend(((a, m), (m, b)))
        tags.extend((tag, tag))

    nodes = np.vstack([coarse.nodes, np.array(new_nodes).reshape(-1, 2)])
    fine = Mesh(
        nodes=nodes,
        triangles=np.array(tris, dtype=np.int64),
        boundary_edges=np.array(edges, dtype=np.int64),
        boundary_tags=tuple(tags),
    )
    fine.validate()
    maps = {
        "parent": np.repeat(np.arange(coarse.n_triangles), 4),
        "coarse_node_embed": np.arange(n0),
        "edge_midpoint_map": midpoint,
    }
    return fine, maps


def _pair_from_coarse(coarse: Mesh, name: str) -> MeshPair:
    fine, maps = refine_midpoint(coarse)
    return MeshPair(coarse=coarse, fine=fine, name=name, **maps)


def _structured(cells, spacing, tagger, mirror_at=None) -> Mesh:
    """Triangulate a union of unit grid cells ``(i, j)`` of size ``spacing``.

    Each cell is split along its "/" diagonal, except cells whose centre lies
    right of ``mirror_at`` which use the "\\" diagonal so that the mesh is
    symmetric under reflection about that line.
    """
    index: dict = {}
    coords = []

    def node(i, j):
        k = index.get((i, j))
        if k is None:
            k = len(coords)
            index[(i, j)] = k
            coords.append((i * spacing, j * spacing))
        return k

    # deterministic node order: row-major over the occupied grid points
    pts = sorted({(i + di, j + dj) for i, j in cells for di in (0, 1) for dj in (0, 1)},
                 key=lambda p: (p[1], p[0]))
    for i, j in pts:
        node(i, j)

    tris = []
    for i, j in sorted(cells, key=lambda c: (c[1], c[0])):
        p00, p10, p01, p11 = node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1)
        centre = (i + 0.5) * spacing
        if mirror_at is not None and centre > mirror_at + _GEOM_TOL:
            tris.extend(((p00, p10, p01), (p10, p11, p01)))
        else:
            tris.extend(((p00, p10, p11), (p00, p11, p01)))
    triangles = np.array(tris, dtype=np.int64)
    nodes = np.array(coords, dtype=float)

    edges = np.array(_free_edges(triangles), dtype=np.int64)
    mids = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
    tags = tuple(tagger(x, y) for x, y in mids)
    mesh = Mesh(nodes=nodes, triangles=triangles, boundary_edges=edges, boundary_tags=tags)
    mesh.validate()
    return mesh


def _close(a, b):
    return abs(a - b) < 1e-9


def _square_tagger(x, y):
    if _close(x, 0.0):
        return SegmentTag.LEFT
    if _close(x, 1.0):
        return SegmentTag.RIGHT
    if _close(y, 0.0):
        return SegmentTag.BOTTOM
    if _close(y, 1.0):
        return SegmentTag.TOP
    raise MeshError(f"boundary point ({x}, {y}) is not on the unit square")


def _reactor_tagger(x, y):
    if _close(y, 0.0):
        return SegmentTag.SUSCEPTOR
    if _close(x, 0.0):
        return SegmentTag.SIDE_WALL_LEFT
    if _close(x, 1.0):
        return SegmentTag.SIDE_WALL_RIGHT
    if _close(y, 4.0 / 3.0):
        return SegmentTag.INLET
    if _close(y, 1.0):
        if x < 1.0 / 3.0:
            return SegmentTag.OUTLET_LEFT
        if x > 2.0 / 3.0:
            return SegmentTag.OUTLET_RIGHT
    if y > 1.0 and (_close(x, 1.0 / 3.0) or _close(x, 2.0 / 3.0)):
        return SegmentTag.INLET_WALL
    raise MeshError(f"boundary point ({x}, {y}) is not on the reactor outline")


def build_unit_square(n: int) -> MeshPair:
    """Cavity (0,1)^2 with ``n`` fine subdivisions per side (``n`` even)."""
    if not isinstance(n, (int, np.integer)) or n < 2 or n % 2:
        raise MeshError(f"n must be a positive even integer, got {n!r}")
    nc = n // 2
    cells = [(i, j) for j in range(nc) for i in range(nc)]
    coarse = _structured(cells, 1.0 / nc, _square_tagger)
    return _pair_from_coarse(coarse, "unit_square")


def build_reactor(n: int) -> MeshPair:
    """Reactor: unit square plus the inlet channel [1/3, 2/3] x [1, 4/3].

    ``n`` is the number of fine subdivisions per unit length and must be a
    multiple of 6 so that the 1/3-wide features align with coarse grid lines.
    The triangulation is mirrored about x = 1/2 whenever that line is a
    coarse grid line (``n`` divisible by 12).
    """
    if not isinstance(n, (int, np.integer)) or n <= 0 or n % 6:
        raise MeshError(f"n must be a positive multiple of 6, got {n!r}")
    nc = n // 2
    third = nc // 3
    cells = [(i, j) for j in range(nc) for i in range(nc)]
    cells += [(i, j) for j in range(nc, nc + third) for i in range(third, 2 * third)]
    coarse = _structured(cells, 1.0 / nc, _reactor_tagger, mirror_at=0.5)
    return _pair_from_coarse(coarse, "reactor")


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: ``v x y``, ``t i j k`` and ``b i j TAG`` records."""
    with open(path, "w") as fh:
        for x, y in mesh.nodes:
            fh.write(f"v {float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"t {i} {j} {k}\n")
        for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"b {i} {j} {tag.value}\n")


def read_mesh(path) -> Mesh:
    nodes, tris, edges, tags = [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            kind = parts[0]
            if kind == "v":
                nodes.append((float(parts[1]), float(parts[2])))
            elif kind == "t":
                tris.append(tuple(int(p) for p in parts[1:4]))
            elif kind == "b":
                edges.append((int(parts[1]), int(parts[2])))
                tags.append(SegmentTag(parts[3]))
            else:
                raise MeshError(f"unknown record type {kind!r}")
    mesh = Mesh(
        nodes=np.array(nodes, dtype=float),
        triangles=np.array(tris, dtype=np.int64),
        boundary_edges=np.array(edges, dtype=np.int64),
        boundary_tags=tuple(tags),
    )
    mesh.validate()
    return mesh
