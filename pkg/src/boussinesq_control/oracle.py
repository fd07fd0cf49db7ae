"""Slow reference computations used to cross-check the main pipeline.

Nothing here reuses the vectorized assembly of :mod:`boussinesq_control.fem`.
Element matrices are built triangle by triangle: the basis functions come
from a Vandermonde solve and the integrals from Gaussian quadrature.
Pressure basis functions are found by point location on the coarse mesh,
not through the refinement parent map.
"""
from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import Mesh, MeshPair, SegmentTag

__all__ = [
    "triangle_rule",
    "quadrature_integrate",
    "element_basis",
    "oracle_mass",
    "oracle_stiffness",
    "oracle_divergence",
    "oracle_convection_e",
    "oracle_gradient_coupling_scalar",
    "oracle_gradient_coupling_vector",
    "oracle_boundary_mass",
    "oracle_curl_form",
    "dense_reference_solve",
    "SingularSystem",
    "OracleGuardError",
    "FdCheckReport",
    "DirectionReport",
    "fd_gradient_check",
    "dense_quadratic_optimum",
    "EPS_LADDER",
]

log = logging.getLogger(__name__)

EPS_LADDER = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
MAX_FD_DOFS = 10_000
MAX_DENSE_DIM = 5000


class OracleGuardError(ValueError):
    """The instance is too large for a reference computation."""


class SingularSystem(np.linalg.LinAlgError):
    """The dense reference factorization hit a zero pivot."""


# ---------------------------------------------------------------------------
# quadrature


def _perm3(a: float) -> list:
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def triangle_rule(degree: int):
    """Symmetric Gauss rule on the reference triangle.

    Returns barycentric points ``(q, 3)`` and weights ``(q,)`` summing to one
    (multiply by the triangle area).  The rule integrates polynomials of total
    degree ``degree`` exactly, for degree 0 to 5.
    """
    if degree < 0 or degree > 5:
        raise ValueError("quadrature degree must be between 0 and 5")
    if degree <= 1:
        pts, wts = [(1 / 3, 1 / 3, 1 / 3)], [1.0]
    elif degree == 2:
        pts, wts = _perm3(1 / 6), [1 / 3] * 3
    elif degree == 3:
        pts = [(1 / 3, 1 / 3, 1 / 3)] + _perm3(0.2)
        wts = [-27 / 48] + [25 / 48] * 3
    else:
        # 7-point degree-5 rule; closed-form abscissae and weights
        s = math.sqrt(15.0)
        a1, a2 = (6 - s) / 21, (6 + s) / 21
        w1, w2 = (155 - s) / 1200, (155 + s) / 1200
        pts = [(1 / 3, 1 / 3, 1 / 3)] + _perm3(a1) + _perm3(a2)
        wts = [9 / 40] + [w1] * 3 + [w2] * 3
    return np.array(pts, dtype=float), np.array(wts, dtype=float)


def element_basis(corners: np.ndarray) -> np.ndarray:
    """Coefficients of the three P1 basis functions on one triangle.

    Row ``i`` holds ``(c0, cx, cy)`` with ``phi_i = c0 + cx x + cy y``,
    obtained by inverting the Vandermonde matrix of the corners.
    """
    vander = np.column_stack([np.ones(3), corners])
    return np.linalg.solve(vander, np.eye(3)).T


def _area(corners: np.ndarray) -> float:
    (x0, y0), (x1, y1), (x2, y2) = corners
    return 0.5 * abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


Integrand = Union[Callable, np.ndarray, Sequence[np.ndarray]]


def quadrature_integrate(mesh: Mesh, integrand: Integrand, degree: int = 5) -> float:
    """Integrate over the mesh triangle by triangle.

    ``integrand`` is a vectorized function ``f(x, y)``, a nodal vector (its
    P1 interpolant is integrated), or a sequence of nodal vectors (the
    product of their interpolants is integrated).
    """
    bary, wts = triangle_rule(degree)
    if callable(integrand):
        fields = None
    else:
        arr = integrand if isinstance(integrand, (list, tuple)) else [integrand]
        fields = [np.asarray(f, dtype=float) for f in arr]
        for f in fields:
            if f.shape != (mesh.n_nodes,):
                raise ValueError("nodal integrand must have one value per mesh node")
    total = 0.0
    for tri in mesh.triangles:
        corners = mesh.nodes[tri]
        pts = bary @ corners
        if fields is None:
            vals = np.asarray(integrand(pts[:, 0], pts[:, 1]), dtype=float)
        else:
            vals = np.ones(len(wts))
            for f in fields:
                vals = vals * (bary @ f[tri])
        total += _area(corners) * float(wts @ vals)
    return total


# ---------------------------------------------------------------------------
# element-loop operators (dense)


def _local_values(corners: np.ndarray, bary: np.ndarray):
    coef = element_basis(corners)
    pts = bary @ corners
    vals = coef[:, 0][None, :] + pts @ coef[:, 1:].T  # (q, 3)
    grads = coef[:, 1:]  # (3, 2)
    return pts, vals, grads


def oracle_mass(mesh: Mesh) -> np.ndarray:
    bary, wts = triangle_rule(2)
    out = np.zeros((mesh.n_nodes, mesh.n_nodes))
    for tri in mesh.triangles:
        corners = mesh.nodes[tri]
        _, vals, _ = _local_values(corners, bary)
        area = _area(corners)
        for a in range(3):
            for b in range(3):
                out[tri[a], tri[b]] += area * np.sum(wts * vals[:, a] * vals[:, b])
    return out


def oracle_stiffness(mesh: Mesh, nu: float = 1.0) -> np.ndarray:
    out = np.zeros((mesh.n_nodes, mesh.n_nodes))
    for tri in mesh.triangles:
        corners = mesh.nodes[tri]
        grads = element_basis(corners)[:, 1:]
        area = _area(corners)
        for a in range(3):
            for b in range(3):
                out[tri[a], tri[b]] += nu * area * grads[a] @ grads[b]
    return out


def _locate(mesh: Mesh, point: np.ndarray) -> int:
    """Index of a triangle containing ``point`` (brute-force search)."""
    for t, tri in enumerate(mesh.triangles):
        coef = element_basis(mesh.nodes[tri])
        lam = coef[:, 0] + coef[:, 1:] @ point
        if np.all(lam >= -1e-12):
            return t
    raise ValueError(f"point {point} lies outside the mesh")


def oracle_divergence(pair: MeshPair) -> np.ndarray:
    """Dense ``b(q_k, phi_j e_c) = int q_k d phi_j / dx_c``, shape (nP, 2 nV)."""
    fine, coarse = pair.fine, pair.coarse
    nv = fine.n_nodes
    bary, wts = triangle_rule(2)
    out = np.zeros((coarse.n_nodes, 2 * nv))
    for tri in fine.triangles:
        corners = fine.nodes[tri]
        pts, _, grads = _local_values(corners, bary)
        area = _area(corners)
        owner = _locate(coarse, corners.mean(axis=0))
        ctri = coarse.triangles[owner]
        ccoef = element_basis(coarse.nodes[ctri])
        qvals = ccoef[:, 0][None, :] + pts @ ccoef[:, 1:].T
        for k in range(3):
            weight = area * np.sum(wts * qvals[:, k])
            for j in range(3):
                for c in range(2):
                    out[ctri[k], tri[j] + c * nv] += weight * grads[j, c]
    return out


def oracle_convection_e(y: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Dense ``int (y . grad phi_j) phi_i`` with y a nodal P1 vector field."""
    n = mesh.n_nodes
    y1, y2 = np.asarray(y[:n], float), np.asarray(y[n:], float)
    bary, wts = triangle_rule(2)
    out = np.zeros((n, n))
    for tri in mesh.triangles:
        corners = mesh.nodes[tri]
        _, vals, grads = _local_values(corners, bary)
        area = _area(corners)
        yq = np.column_stack([bary @ y1[tri], bary @ y2[tri]])
        for i in range(3):
            for j in range(3):
                out[tri[i], tri[j]] += area * np.sum(wts * (yq @ grads[j]) * vals[:, i])
    return out


def oracle_gradient_coupling_scalar(theta: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Dense ``int phi_j (d theta/dx_c) phi_i``, shape (n, 2n)."""
    n = mesh.n_nodes
    bary, wts = triangle_rule(2)
    out = np.zeros((n, 2 * n))
    for tri in mesh.triangles:
        corners = mesh.nodes[tri]
        _, vals, grads = _local_values(corners, bary)
        area = _area(corners)
        dtheta = grads.T @ np.asarray(theta, float)[tri]
        for i in range(3):
            for j in range(3):
                m_ij = area * np.sum(wts * vals[:, i] * vals[:, j])
                for c in range(2):
                    out[tri[i], tri[j] + c * n] += m_ij * dtheta[c]
    return out


def oracle_gradient_coupling_vector(ytilde: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Dense ``int phi_j (d ytilde_a/dx_c) phi_i``, shape (2n, 2n)."""
    n = mesh.n_nodes
    ytilde = np.asarray(ytilde, float)
    out = np.zeros((2 * n, 2 * n))
    for a in range(2):
        block = oracle_gradient_coupling_scalar(ytilde[a * n:(a + 1) * n], mesh)
        out[a * n:(a + 1) * n, :] = block
    return out


def oracle_boundary_mass(mesh: Mesh, *tags: SegmentTag) -> np.ndarray:
    """Dense ``int_{tagged boundary} phi_i phi_j ds`` by Gauss-Legendre."""
    xg, wg = np.polynomial.legendre.leggauss(3)
    s = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    out = np.zeros((mesh.n_nodes, mesh.n_nodes))
    wanted = set(tags)
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        if tag not in wanted:
            continue
        length = float(np.linalg.norm(mesh.nodes[b] - mesh.nodes[a]))
        shape = np.column_stack([1.0 - s, s])
        ends = (a, b)
        for i in range(2):
            for j in range(2):
                out[ends[i], ends[j]] += length * np.sum(wg * shape[:, i] * shape[:, j])
    return out


def oracle_curl_form(mesh: Mesh) -> np.ndarray:
    """Dense matrix of ``y -> int |d y2/dx - d y1/dy|^2``."""
    n = mesh.n_nodes
    out = np.zeros((2 * n, 2 * n))
    for tri in mesh.triangles:
        corners = mesh.nodes[tri]
        grads = element_basis(corners)[:, 1:]
        row = np.zeros(2 * n)
        for j in range(3):
            row[tri[j]] -= grads[j, 1]
            row[tri[j] + n] += grads[j, 0]
        out += _area(corners) * np.outer(row, row)
    return out


# ---------------------------------------------------------------------------
# dense linear algebra


def dense_reference_solve(matrix, rhs, trans: bool = False) -> np.ndarray:
    """Solve with a dense LU factorization (dimension at most 5000)."""
    a = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("reference solve needs a square matrix")
    if a.shape[0] > MAX_DENSE_DIM:
        raise OracleGuardError(f"dense reference solve limited to {MAX_DENSE_DIM} unknowns")
    with warnings.catch_warnings():
        # singularity is detected and reported below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.size and diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * a.shape[0]:
        raise SingularSystem("matrix is numerically singular")
    return sla.lu_solve((lu, piv), np.asarray(rhs, dtype=float), trans=1 if trans else 0)


# ---------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class DirectionReport:
    direction: int
    eps: tuple
    fd: np.ndarray
    adjoint: float
    rel_errors: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.rel_errors))

    @property
    def best_eps(self) -> float:
        return self.eps[self.best_index]

    @property
    def best_error(self) -> float:
        return float(self.rel_errors[self.best_index])


@dataclass
class FdCheckReport:
    directions: list = field(default_factory=list)
    threshold: float = 1e-5

    @property
    def best_errors(self) -> np.ndarray:
        return np.array([d.best_error for d in self.directions])

    @property
    def passed(self) -> bool:
        return bool(self.directions) and bool(np.all(self.best_errors < self.threshold))

    def to_text(self) -> str:
        lines = []
        for d in self.directions:
            status = "ok" if d.best_error < self.threshold else "FAIL"
            lines.append(
                f"direction {d.direction}: adjoint {d.adjoint:.12e}  best eps {d.best_eps:.0e}"
                f"  rel error {d.best_error:.3e}  {status}")
        lines.append("passed" if self.passed else "failed")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("direction,eps,fd,adjoint,rel_error\n")
        for d in self.directions:
            for e, fd, err in zip(d.eps, d.fd, d.rel_errors):
                buf.write(f"{d.direction},{e:.1e},{fd:.16e},{d.adjoint:.16e},{err:.6e}\n")
        return buf.getvalue()


def _objective(setup, v) -> float:
    from .state import evaluate_objective, solve_state

    return evaluate_objective(setup, solve_state(setup, v, keep_factors=False), v)


def fd_gradient_check(setup, v=None, n_dirs: int = 5, seed: int = 0,
                      eps: Sequence[float] = EPS_LADDER, threshold: float = 1e-5,
                      directions=None) -> FdCheckReport:
    """Compare central differences of J with the adjoint pairing (g, dv)_U.

    Directions are pseudo-random and normalized in the control norm unless
    given explicitly through ``directions``.
    """
    from .adjoint import compute_gradient, solve_adjoint
    from .state import solve_state

    eps = tuple(float(e) for e in eps)
    if any(b >= a for a, b in zip(eps, eps[1:])) or not eps:
        raise ValueError("eps ladder must be non-empty and strictly decreasing")
    fine_dofs = 3 * setup.n_nodes
    if fine_dofs > MAX_FD_DOFS:
        raise OracleGuardError(f"finite-difference check limited to {MAX_FD_DOFS} fine dofs, "
                               f"instance has {fine_dofs}")
    ctrl = setup.control
    v = ctrl.zeros() if v is None else ctrl.check(v)
    state = solve_state(setup, v)
    g = compute_gradient(setup, solve_adjoint(setup, state), v)

    if directions is None:
        rng = np.random.default_rng(seed)
        directions = []
        for _ in range(n_dirs):
            d = rng.standard_normal(ctrl.shape)
            directions.append(d / ctrl.norm(d))
    report = FdCheckReport(threshold=threshold)
    for idx, d in enumerate(directions):
        d = ctrl.check(d)
        exact = ctrl.inner(g, d)
        fd = np.array([(_objective(setup, v + e * d) - _objective(setup, v - e * d)) / (2 * e)
                       for e in eps])
        scale = max(abs(exact), np.finfo(float).tiny)
        rel = np.abs(fd - exact) / scale
        report.directions.append(DirectionReport(idx, eps, fd, exact, rel))
        log.info("fd check direction %d: best rel error %.3e", idx, rel.min())
    return report


# ---------------------------------------------------------------------------
# quadratic sanity problem


def dense_quadratic_optimum(setup) -> np.ndarray:
    """Exact minimizer when the state depends affinely on the control.

    With convection disabled the map v -> y is affine.  Its matrix is built
    column by column from forward solves and the normal equations
    ``(S^T Q S + alpha G) v = -S^T Q r0`` are solved densely, where ``Q`` is
    the block-diagonal state metric, ``G`` the control Gram matrix and ``r0``
    the residual at v = 0.
    """
    from .problem import Objective, interpolate_target
    from .state import solve_state

    if setup.convection:
        raise ValueError("the dense optimum needs convection switched off")
    ctrl = setup.control
    shape = ctrl.shape
    dim = int(np.prod(shape))
    if dim > MAX_DENSE_DIM:
        raise OracleGuardError(f"dense optimum limited to {MAX_DENSE_DIM} control unknowns")
    N = setup.N
    ops = setup.ops
    metric = ops.Mv if setup.objective is Objective.TRACKING else ops.W
    metric = setup.dt * setup.tracking_weight * metric.toarray()

    y0 = solve_state(setup, ctrl.zeros(), keep_factors=False).y[1:N + 1]
    r0 = y0.copy()
    if setup.objective is Objective.TRACKING:
        for k in range(1, N + 1):
            r0[k - 1] -= interpolate_target(setup, k)
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        yi = solve_state(setup, e.reshape(shape), keep_factors=False).y[1:N + 1]
        cols.append((yi - y0).ravel())
    S = np.column_stack(cols)
    Q = sla.block_diag(*([metric] * N))
    G = sla.block_diag(*([setup.dt * ctrl.mass.toarray()] * N))
    lhs = S.T @ Q @ S + setup.alpha * G
    rhs = -S.T @ (Q @ r0.ravel())
    return dense_reference_solve(lhs, rhs).reshape(shape)
