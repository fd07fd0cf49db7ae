"""P1 / P1-iso-P2 finite element operators.

Velocity, temperature and control use continuous P1 on the fine mesh;
pressure uses continuous P1 on the coarse mesh.  A velocity field is stored as
the two scalar coefficient vectors stacked, ``[y1; y2]``.

All integrals are exact: P1 x P1 products use the closed-form element mass,
and the convection integrands (P1 transport field times P1 test function
times a constant gradient) are degree 2 and are integrated with the same
closed form, which coincides with the 3-point edge-midpoint rule.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, MeshError, MeshPair, SegmentTag

__all__ = [
    "SpaceKind",
    "FeSpace",
    "FemOperators",
    "element_geometry",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_divergence",
    "assemble_convection_c",
    "assemble_convection_e",
    "assemble_boundary_mass",
    "assemble_curl",
    "gradient_coupling_scalar",
    "gradient_coupling_vector",
    "curl_form",
    "check_symmetric",
    "write_coo",
]

_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


class SpaceKind(enum.Enum):
    SCALAR_FINE = "V_h"
    SCALAR_FINE_ZERO = "V_0h"
    PRESSURE_COARSE = "P_H"


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Continuous P1 space on one mesh of a :class:`MeshPair`.

    Dirichlet and zero-mean constraints are not eliminated here; they are
    applied when a system is solved.
    """

    pair: MeshPair
    kind: SpaceKind

    @property
    def mesh(self) -> Mesh:
        if self.kind is SpaceKind.PRESSURE_COARSE:
            return self.pair.coarse
        return self.pair.fine

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes

    @property
    def constrained_dofs(self) -> np.ndarray:
        if self.kind is SpaceKind.SCALAR_FINE_ZERO:
            return np.unique(self.mesh.boundary_edges.ravel())
        return np.empty(0, dtype=np.int64)

    @property
    def zero_mean(self) -> bool:
        return self.kind is SpaceKind.PRESSURE_COARSE


def _mesh_of(obj) -> Mesh:
    if isinstance(obj, Mesh):
        return obj
    if isinstance(obj, FeSpace):
        return obj.mesh
    if isinstance(obj, MeshPair):
        return obj.fine
    raise TypeError(f"expected Mesh, FeSpace or MeshPair, got {type(obj).__name__}")


@dataclass(frozen=True)
class ElementGeometry:
    areas: np.ndarray  # (n_tri,)
    grads: np.ndarray  # (n_tri, 3, 2) gradients of the barycentric functions


def element_geometry(mesh: Mesh) -> ElementGeometry:
    p = mesh.nodes[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # rows of inv(J)^T applied to reference gradients (-1,-1), (1,0), (0,1)
    g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
    g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
    g0 = -g1 - g2
    return ElementGeometry(areas=0.5 * det, grads=np.stack([g0, g1, g2], axis=1))


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    mat = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    out = mat.tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def _element_index(tri):
    rows = np.repeat(tri[:, :, None], 3, axis=2)
    cols = np.repeat(tri[:, None, :], 3, axis=1)
    return rows, cols


def assemble_mass(space) -> sp.csr_matrix:
    """Consistent P1 mass matrix, entry (i, j) = int phi_i phi_j."""
    mesh = _mesh_of(space)
    geo = element_geometry(mesh)
    rows, cols = _element_index(mesh.triangles)
    vals = geo.areas[:, None, None] * _LOCAL_MASS[None]
    n = mesh.n_nodes
    return _scatter(rows, cols, vals, (n, n))


def assemble_stiffness(space, nu: float = 1.0) -> sp.csr_matrix:
    """Entry (i, j) = nu * int grad phi_i . grad phi_j."""
    if not nu > 0:
        raise ValueError(f"diffusivity must be positive, got {nu}")
    mesh = _mesh_of(space)
    geo = element_geometry(mesh)
    rows, cols = _element_index(mesh.triangles)
    vals = nu * geo.areas[:, None, None] * np.einsum("mic,mjc->mij", geo.grads, geo.grads)
    n = mesh.n_nodes
    return _scatter(rows, cols, vals, (n, n))


def _coarse_values_at_fine_centroids(pair: MeshPair) -> np.ndarray:
    """Coarse barycentric coordinates at each fine centroid, (n_fine_tri, 3)."""
    coarse, fine = pair.coarse, pair.fine
    centroid = fine.nodes[fine.triangles].mean(axis=1)
    parent = coarse.nodes[coarse.triangles[pair.parent]]
    geo = element_geometry(coarse)
    grads = geo.grads[pair.parent]
    rel = centroid - parent[:, 0]
    lam12 = np.einsum("mkc,mc->mk", grads[:, 1:], rel)
    return np.column_stack([1.0 - lam12.sum(axis=1), lam12])


def assemble_divergence(p_space, v_space=None) -> sp.csr_matrix:
    """Discrete divergence, entry (k, (c, j)) = int q_k d(phi_j)/dx_c.

    Shape ``(n_coarse_nodes, 2 * n_fine_nodes)``.  On each fine triangle the
    coarse basis is linear and the fine gradient is constant, so the integral
    is the gradient times area times the coarse basis at the centroid.
    """
    pair = p_space.pair if isinstance(p_space, FeSpace) else p_space
    if isinstance(p_space, FeSpace) and p_space.kind is not SpaceKind.PRESSURE_COARSE:
        raise MeshError("divergence needs the coarse pressure space as first argument")
    if isinstance(v_space, FeSpace) and v_space.pair is not pair:
        raise MeshError("pressure and velocity spaces live on different mesh pairs")
    fine, coarse = pair.fine, pair.coarse
    geo = element_geometry(fine)
    qvals = _coarse_values_at_fine_centroids(pair)  # (m, 3)
    ctri = coarse.triangles[pair.parent]  # (m, 3)
    nv = fine.n_nodes
    blocks = []
    for c in range(2):
        vals = geo.areas[:, None, None] * qvals[:, :, None] * geo.grads[:, None, :, c]
        rows = np.repeat(ctri[:, :, None], 3, axis=2)
        cols = np.repeat(fine.triangles[:, None, :], 3, axis=1) + c * nv
        blocks.append((rows, cols, vals))
    rows = np.concatenate([b[0].ravel() for b in blocks])
    cols = np.concatenate([b[1].ravel() for b in blocks])
    vals = np.concatenate([b[2].ravel() for b in blocks])
    return _scatter(rows, cols, vals, (coarse.n_nodes, 2 * nv))


def _split_velocity(mesh: Mesh, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    n = mesh.n_nodes
    if y.shape != (2 * n,):
        raise ValueError(f"velocity vector must have length {2 * n}, got shape {y.shape}")
    return np.stack([y[:n], y[n:]], axis=1)


def assemble_convection_e(y, space) -> sp.csr_matrix:
    """Scalar transport, entry (i, j) = int (y . grad phi_j) phi_i."""
    mesh = _mesh_of(space)
    yn = _split_velocity(mesh, y)
    geo = element_geometry(mesh)
    ye = yn[mesh.triangles]  # (m, 3, 2)
    # int_T y phi_i = |T|/12 (y_i + sum_k y_k)
    yint = geo.areas[:, None, None] / 12.0 * (ye + ye.sum(axis=1, keepdims=True))
    vals = np.einsum("mic,mjc->mij", yint, geo.grads)
    rows, cols = _element_index(mesh.triangles)
    n = mesh.n_nodes
    return _scatter(rows, cols, vals, (n, n))


def assemble_convection_c(y, space) -> sp.csr_matrix:
    """Vector transport ``w -> c(y, w, .)``, block diagonal on ``[w1; w2]``."""
    ce = assemble_convection_e(y, space)
    return sp.block_diag([ce, ce], format="csr")


def _weighted_mass(mesh: Mesh, weights: np.ndarray):
    geo = element_geometry(mesh)
    rows, cols = _element_index(mesh.triangles)
    vals = (weights * geo.areas)[:, None, None] * _LOCAL_MASS[None]
    return rows, cols, vals


def gradient_coupling_scalar(theta, space) -> sp.csr_matrix:
    """Matrix of ``w -> e(w, theta, .)``, shape ``(n, 2n)``.

    Entry (i, (c, j)) = int phi_j (d theta / dx_c) phi_i.
    """
    mesh = _mesh_of(space)
    theta = np.asarray(theta, dtype=float)
    geo = element_geometry(mesh)
    dtheta = np.einsum("mk,mkc->mc", theta[mesh.triangles], geo.grads)
    n = mesh.n_nodes
    parts = []
    for c in range(2):
        rows, cols, vals = _weighted_mass(mesh, dtheta[:, c])
        parts.append((rows, cols + c * n, vals))
    rows = np.concatenate([p[0].ravel() for p in parts])
    cols = np.concatenate([p[1].ravel() for p in parts])
    vals = np.concatenate([p[2].ravel() for p in parts])
    return _scatter(rows, cols, vals, (n, 2 * n))


def gradient_coupling_vector(ytilde, space) -> sp.csr_matrix:
    """Matrix of ``w -> c(w, ytilde, .)``, shape ``(2n, 2n)``.

    Entry ((a, i), (c, j)) = int phi_j (d ytilde_a / dx_c) phi_i.
    """
    mesh = _mesh_of(space)
    yn = _split_velocity(mesh, ytilde)
    geo = element_geometry(mesh)
    # grad[m, a, c] = d ytilde_a / dx_c on triangle m
    grad = np.einsum("mka,mkc->mac", yn[mesh.triangles], geo.grads)
    n = mesh.n_nodes
    parts = []
    for a in range(2):
        for c in range(2):
            rows, cols, vals = _weighted_mass(mesh, grad[:, a, c])
            parts.append((rows + a * n, cols + c * n, vals))
    rows = np.concatenate([p[0].ravel() for p in parts])
    cols = np.concatenate([p[1].ravel() for p in parts])
    vals = np.concatenate([p[2].ravel() for p in parts])
    return _scatter(rows, cols, vals, (2 * n, 2 * n))


def assemble_boundary_mass(space, *tags: SegmentTag) -> sp.csr_matrix:
    """Entry (i, j) = int over the tagged boundary of phi_i phi_j ds."""
    mesh = _mesh_of(space)
    if not tags:
        raise MeshError("at least one boundary tag is required")
    edges = mesh.edges_with_tag(*tags)
    d = mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    vals = length[:, None, None] * local[None]
    rows = np.repeat(edges[:, :, None], 2, axis=2)
    cols = np.repeat(edges[:, None, :], 2, axis=1)
    n = mesh.n_nodes
    return _scatter(rows, cols, vals, (n, n))


def assemble_curl(space):
    """Elementwise curl ``d y2/dx1 - d y1/dx2``.

    Returns
    -------
    curl : csr_matrix, shape (n_tri, 2n)
        maps a velocity vector to its per-triangle (constant) vorticity
    weights : ndarray, shape (n_tri,)
        triangle areas, so that ``int |curl y|^2 = sum weights * (curl y)^2``
    """
    mesh = _mesh_of(space)
    geo = element_geometry(mesh)
    n = mesh.n_nodes
    m = mesh.n_triangles
    rows = np.repeat(np.arange(m)[:, None], 3, axis=1)
    r = np.concatenate([rows.ravel(), rows.ravel()])
    c = np.concatenate([mesh.triangles.ravel(), (mesh.triangles + n).ravel()])
    v = np.concatenate([-geo.grads[:, :, 1].ravel(), geo.grads[:, :, 0].ravel()])
    return _scatter(r, c, v, (m, 2 * n)), geo.areas.copy()


def curl_form(curl: sp.csr_matrix, weights: np.ndarray) -> sp.csr_matrix:
    """Matrix of the quadratic form ``y -> int |curl y|^2``."""
    return (curl.T @ sp.diags(weights) @ curl).tocsr()


def check_symmetric(mat, rtol: float = 1e-14) -> bool:
    mat = sp.csr_matrix(mat)
    scale = abs(mat).max() if mat.nnz else 0.0
    diff = mat - mat.T
    worst = abs(diff).max() if diff.nnz else 0.0
    return worst <= rtol * scale


@dataclass(eq=False)
class FemOperators:
    """Operators shared by all time steps of one problem.

    ``M`` is the fine scalar mass (also used for temperature), ``Mv`` its
    block-diagonal velocity version, ``A``/``D`` the viscosity- and
    diffusivity-weighted stiffness, ``B`` the divergence coupling,
    ``pressure_mean`` the coarse row ``int q_k`` and ``W`` the curl form.
    Boundary masses are assembled on demand and cached per tag set.
    """

    pair: MeshPair
    nu1: float
    nu2: float
    M: sp.csr_matrix
    Mv: sp.csr_matrix
    K: sp.csr_matrix
    A: sp.csr_matrix
    D: sp.csr_matrix
    B: sp.csr_matrix
    pressure_mean: np.ndarray
    curl: sp.csr_matrix
    curl_weights: np.ndarray
    W: sp.csr_matrix
    _boundary: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, pair: MeshPair, nu1: float, nu2: float) -> "FemOperators":
        fine = FeSpace(pair, SpaceKind.SCALAR_FINE)
        coarse = FeSpace(pair, SpaceKind.PRESSURE_COARSE)
        M = assemble_mass(fine)
        K = assemble_stiffness(fine, 1.0)
        curl, weights = assemble_curl(fine)
        return cls(
            pair=pair,
            nu1=nu1,
            nu2=nu2,
            M=M,
            Mv=sp.block_diag([M, M], format="csr"),
            K=K,
            A=sp.block_diag([nu1 * K, nu1 * K], format="csr"),
            D=(nu2 * K).tocsr(),
            B=assemble_divergence(coarse, fine),
            pressure_mean=np.asarray(assemble_mass(coarse).sum(axis=1)).ravel(),
            curl=curl,
            curl_weights=weights,
            W=curl_form(curl, weights),
        )

    @property
    def n_nodes(self) -> int:
        return self.pair.fine.n_nodes

    def boundary_mass(self, *tags: SegmentTag) -> sp.csr_matrix:
        key = frozenset(tags)
        mat = self._boundary.get(key)
        if mat is None:
            mat = assemble_boundary_mass(self.pair.fine, *sorted(key, key=lambda t: t.value))
            self._boundary[key] = mat
        return mat

    def convection_e(self, y) -> sp.csr_matrix:
        return assemble_convection_e(y, self.pair.fine)

    def convection_c(self, y) -> sp.csr_matrix:
        return assemble_convection_c(y, self.pair.fine)


def write_coo(mat, path) -> None:
    """Write ``row col value`` triplets, one per line."""
    coo = sp.coo_matrix(mat)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")
