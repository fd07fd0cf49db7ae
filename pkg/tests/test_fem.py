import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from boussinesq_control import oracle
from boussinesq_control.fem import (FemOperators, FeSpace, SpaceKind, assemble_boundary_mass,
                                    assemble_convection_c, assemble_convection_e, assemble_curl,
                                    assemble_divergence, assemble_mass, assemble_stiffness,
                                    check_symmetric, curl_form, gradient_coupling_scalar,
                                    gradient_coupling_vector, write_coo)
from boussinesq_control.mesh import Mesh, MeshError, SegmentTag, build_reactor, build_unit_square
from boussinesq_control.problem import cavity_target


def single_triangle(corners):
    return Mesh(nodes=np.asarray(corners, float), triangles=np.array([[0, 1, 2]]),
                boundary_edges=np.array([[0, 1], [1, 2], [2, 0]]),
                boundary_tags=(SegmentTag.BOTTOM, SegmentTag.RIGHT, SegmentTag.LEFT))


def cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def nodal(mesh, f):
    """Stack the components of a vector field evaluated at the mesh nodes."""
    u1, u2 = f(mesh.nodes[:, 0], mesh.nodes[:, 1])
    return np.concatenate([np.broadcast_to(u1, mesh.n_nodes), np.broadcast_to(u2, mesh.n_nodes)])


@pytest.fixture(scope="module")
def pair():
    return build_unit_square(4)  # 32 fine triangles


def test_space_kinds(pair):
    v = FeSpace(pair, SpaceKind.SCALAR_FINE)
    v0 = FeSpace(pair, SpaceKind.SCALAR_FINE_ZERO)
    p = FeSpace(pair, SpaceKind.PRESSURE_COARSE)
    assert v.n_dofs == pair.fine.n_nodes == v0.n_dofs
    assert p.n_dofs == pair.coarse.n_nodes
    assert p.zero_mean and not v.zero_mean
    assert v0.constrained_dofs.size == 16 and v.constrained_dofs.size == 0


def test_element_mass():
    mesh = single_triangle([[0.0, 0.0], [2.0, 0.5], [0.3, 1.5]])
    S = mesh.area()
    expected = S / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
    assert np.allclose(assemble_mass(mesh).toarray(), expected, rtol=0, atol=1e-15)
    assert np.allclose(oracle.oracle_mass(mesh), expected, rtol=0, atol=1e-15)


def test_mass_partition_of_unity(pair):
    M = assemble_mass(pair.fine)
    one = np.ones(pair.fine.n_nodes)
    assert (M @ one).sum() == pytest.approx(1.0, rel=1e-14)
    assert check_symmetric(M)


def test_element_stiffness():
    mesh = single_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.allclose(assemble_stiffness(mesh).toarray(), expected, atol=1e-15)
    assert np.allclose(oracle.oracle_stiffness(mesh), expected, atol=1e-15)


def test_stiffness_properties(pair):
    K = assemble_stiffness(pair.fine, 0.7)
    assert np.abs(K @ np.ones(pair.fine.n_nodes)).max() < 1e-14
    assert check_symmetric(K)
    assert np.allclose((2 * K).toarray(), assemble_stiffness(pair.fine, 1.4).toarray(), atol=0)
    with pytest.raises(ValueError):
        assemble_stiffness(pair.fine, 0.0)


def test_divergence_constant_and_rotation(pair):
    B = assemble_divergence(FeSpace(pair, SpaceKind.PRESSURE_COARSE), FeSpace(pair, SpaceKind.SCALAR_FINE))
    assert B.shape == (pair.coarse.n_nodes, 2 * pair.fine.n_nodes)
    const = nodal(pair.fine, lambda x, y: (0.3, -1.2))
    assert np.abs(B @ const).max() < 1e-12
    rot = nodal(pair.fine, lambda x, y: (-y, x))
    assert np.abs(B @ rot).max() < 1e-12


def test_divergence_linear_field(pair):
    B = assemble_divergence(pair)
    y = nodal(pair.fine, lambda x, y: (x, 0 * y))
    # div y = 1, so (B y)_k = int q_k
    expected = [oracle.quadrature_integrate(pair.coarse, np.eye(pair.coarse.n_nodes)[k], 2)
                for k in range(pair.coarse.n_nodes)]
    assert np.allclose(B @ y, expected, atol=1e-14)


def test_divergence_rejects_wrong_space(pair):
    with pytest.raises(MeshError):
        assemble_divergence(FeSpace(pair, SpaceKind.SCALAR_FINE))
    other = build_unit_square(4)
    with pytest.raises(MeshError):
        assemble_divergence(FeSpace(pair, SpaceKind.PRESSURE_COARSE), FeSpace(other, SpaceKind.SCALAR_FINE))


def test_divergence_full_row_rank_on_zero_mean():
    pair = build_unit_square(8)
    B = assemble_divergence(pair).toarray()
    boundary = np.unique(pair.fine.boundary_edges)
    interior = np.setdiff1d(np.arange(pair.fine.n_nodes), boundary)
    Bf = B[:, np.concatenate([interior, interior + pair.fine.n_nodes])]
    M = assemble_mass(pair.fine).toarray()[np.ix_(interior, interior)]
    Minv = np.linalg.inv(np.kron(np.eye(2), M))
    schur = Bf @ Minv @ Bf.T
    # only the constant pressure is in the kernel
    assert np.linalg.matrix_rank(schur, tol=1e-10 * np.abs(schur).max()) == pair.coarse.n_nodes - 1


def test_convection_zero_field(pair):
    n = pair.fine.n_nodes
    assert assemble_convection_e(np.zeros(2 * n), pair.fine).nnz == 0 or \
        abs(assemble_convection_e(np.zeros(2 * n), pair.fine)).max() == 0
    assert abs(assemble_convection_c(np.zeros(2 * n), pair.fine)).max() == 0


def test_convection_of_constant_vanishes(pair):
    fine = pair.fine
    y = nodal(fine, lambda x, y: (np.sin(3 * x + y), np.cos(x * y)))
    one = np.ones(fine.n_nodes)
    assert np.abs(assemble_convection_e(y, fine) @ one).max() < 1e-14
    assert np.abs(assemble_convection_c(y, fine) @ np.ones(2 * fine.n_nodes)).max() < 1e-14


def test_convection_integration_by_parts():
    """c(y, w, w) + (1/2) int (div y) |w|^2 = (1/2) int_boundary (y.n) |w|^2."""
    mesh = build_unit_square(2).coarse  # two triangles
    rng = np.random.default_rng(3)
    n = mesh.n_nodes
    y, w = rng.standard_normal(2 * n), rng.standard_normal(n)
    lhs_c = w @ (assemble_convection_e(y, mesh) @ w)
    # int (div y) w^2 with div y constant per triangle
    grads_div = 0.0
    for tri in mesh.triangles:
        coef = oracle.element_basis(mesh.nodes[tri])
        div = coef[:, 1] @ y[tri] + coef[:, 2] @ y[tri + n]
        sub = Mesh(nodes=mesh.nodes[tri], triangles=np.array([[0, 1, 2]]),
                   boundary_edges=np.array([[0, 1], [1, 2], [2, 0]]),
                   boundary_tags=(SegmentTag.BOTTOM,) * 3)
        grads_div += div * oracle.quadrature_integrate(sub, [w[tri], w[tri]], 2)
    # boundary term via Gauss-Legendre on each boundary edge
    xg, wg = np.polynomial.legendre.leggauss(3)
    s, wg = 0.5 * (xg + 1), 0.5 * wg
    bnd = 0.0
    for a, b in mesh.boundary_edges:
        t = mesh.nodes[b] - mesh.nodes[a]
        normal = np.array([t[1], -t[0]])  # outward for counter-clockwise boundary
        yn = ((1 - s) * y[a] + s * y[b]) * normal[0] + ((1 - s) * y[a + n] + s * y[b + n]) * normal[1]
        ww = (1 - s) * w[a] + s * w[b]
        bnd += np.sum(wg * yn * ww ** 2)
    assert lhs_c + 0.5 * grads_div == pytest.approx(0.5 * bnd, abs=1e-13)


def test_convection_linear_in_field(pair):
    rng = np.random.default_rng(1)
    n = pair.fine.n_nodes
    y1, y2 = rng.standard_normal(2 * n), rng.standard_normal(2 * n)
    lhs = assemble_convection_e(2 * y1 - y2, pair.fine)
    rhs = 2 * assemble_convection_e(y1, pair.fine) - assemble_convection_e(y2, pair.fine)
    assert abs(lhs - rhs).max() < 1e-14
    with pytest.raises(ValueError):
        assemble_convection_e(np.zeros(n), pair.fine)


def test_boundary_mass_edge():
    mesh = single_triangle([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
    mb = assemble_boundary_mass(mesh, SegmentTag.BOTTOM).toarray()
    assert np.allclose(mb[:2, :2], 3.0 / 6 * np.array([[2, 1], [1, 2]]), atol=1e-15)
    assert np.abs(mb[2]).max() == 0


def test_boundary_mass_totals():
    fine = build_unit_square(8).fine
    mb = assemble_boundary_mass(fine, SegmentTag.LEFT, SegmentTag.RIGHT)
    one = np.ones(fine.n_nodes)
    assert one @ mb @ one == pytest.approx(2.0, rel=1e-14)
    reactor = build_reactor(12).fine
    mi = assemble_boundary_mass(reactor, SegmentTag.INLET)
    one = np.ones(reactor.n_nodes)
    assert one @ mi @ one == pytest.approx(1.0 / 3.0, rel=1e-14)
    with pytest.raises(MeshError):
        assemble_boundary_mass(fine)


def test_curl_rotation_and_gradient():
    fine = build_unit_square(8).fine
    curl, weights = assemble_curl(fine)
    rot = nodal(fine, lambda x, y: (-y, x))
    assert np.allclose(curl @ rot, 2.0, atol=1e-13)
    W = curl_form(curl, weights)
    assert 0.5 * rot @ (W @ rot) == pytest.approx(2.0 * fine.area(), rel=1e-13)
    grad = nodal(fine, lambda x, y: (x, y))
    assert np.abs(curl @ grad).max() < 1e-13
    assert check_symmetric(W)


def test_curl_form_target_against_quadrature():
    fine = build_unit_square(8).fine
    yd = nodal(fine, lambda x, y: cavity_target(x, y, 0.0))
    curl, weights = assemble_curl(fine)
    value = yd @ (curl_form(curl, weights) @ yd)
    n = fine.n_nodes

    def curl_sq(tri_mesh):
        total = 0.0
        for tri in tri_mesh.triangles:
            coef = oracle.element_basis(tri_mesh.nodes[tri])
            c = coef[:, 1] @ yd[tri + n] - coef[:, 2] @ yd[tri]
            total += 0.5 * abs(cross2(*(tri_mesh.nodes[tri[1:]] - tri_mesh.nodes[tri[0]]))) * c * c
        return total

    assert value == pytest.approx(curl_sq(fine), rel=1e-12)
    assert value == pytest.approx(yd @ (oracle.oracle_curl_form(fine) @ yd), rel=1e-12)


@pytest.mark.parametrize("builder,n", [(build_unit_square, 4), (build_unit_square, 2)])
def test_operators_match_oracle(builder, n):
    pair = builder(n)
    fine = pair.fine
    assert fine.n_triangles <= 32
    rng = np.random.default_rng(n)
    y = rng.standard_normal(2 * fine.n_nodes)
    th = rng.standard_normal(fine.n_nodes)

    def close(a, b):
        a = a.toarray() if sp.issparse(a) else a
        assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(b).max())

    close(assemble_mass(fine), oracle.oracle_mass(fine))
    close(assemble_stiffness(fine, 0.37), oracle.oracle_stiffness(fine, 0.37))
    close(assemble_divergence(pair), oracle.oracle_divergence(pair))
    close(assemble_convection_e(y, fine), oracle.oracle_convection_e(y, fine))
    close(gradient_coupling_scalar(th, fine), oracle.oracle_gradient_coupling_scalar(th, fine))
    close(gradient_coupling_vector(y, fine), oracle.oracle_gradient_coupling_vector(y, fine))
    for tag in SegmentTag:
        if tag in fine.tags():
            close(assemble_boundary_mass(fine, tag), oracle.oracle_boundary_mass(fine, tag))
    curl, w = assemble_curl(fine)
    close(curl_form(curl, w), oracle.oracle_curl_form(fine))


def test_gradient_couplings_are_derivatives():
    """e(w, theta, .) is the derivative of y -> e(y, theta, .) along w."""
    fine = build_reactor(6).fine
    rng = np.random.default_rng(7)
    n = fine.n_nodes
    w, th, yt = rng.standard_normal(2 * n), rng.standard_normal(n), rng.standard_normal(2 * n)
    assert np.allclose(gradient_coupling_scalar(th, fine) @ w,
                       assemble_convection_e(w, fine) @ th, atol=1e-13)
    assert np.allclose(gradient_coupling_vector(yt, fine) @ w,
                       assemble_convection_c(w, fine) @ yt, atol=1e-13)


def test_fem_operators_bundle():
    pair = build_unit_square(4)
    ops = FemOperators.build(pair, 0.5, 0.25)
    assert ops.Mv.shape == (2 * pair.fine.n_nodes,) * 2
    assert np.allclose(ops.A.toarray()[: ops.n_nodes, : ops.n_nodes], 0.5 * ops.K.toarray())
    assert np.allclose(ops.D.toarray(), 0.25 * ops.K.toarray())
    assert ops.pressure_mean.sum() == pytest.approx(1.0)
    assert ops.boundary_mass(SegmentTag.LEFT, SegmentTag.RIGHT) is ops.boundary_mass(SegmentTag.RIGHT, SegmentTag.LEFT)
    for mat in (ops.M, ops.Mv, ops.A, ops.D, ops.W):
        assert check_symmetric(mat)


def test_write_coo(tmp_path):
    mat = assemble_mass(build_unit_square(2).fine)
    write_coo(mat, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[0] == f"# 9 9 {mat.nnz}"
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    back = sp.coo_matrix((rows[:, 2], (rows[:, 0].astype(int), rows[:, 1].astype(int))), shape=(9, 9))
    assert np.array_equal(back.toarray(), mat.toarray())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=6, max_size=6))
def test_mass_positive_on_random_triangles(coords):
    pts = np.array(coords).reshape(3, 2)
    area = 0.5 * cross2(pts[1] - pts[0], pts[2] - pts[0])
    if abs(area) < 1e-3:
        return
    if area < 0:
        pts = pts[[0, 2, 1]]
    mesh = single_triangle(pts)
    M = assemble_mass(mesh).toarray()
    assert np.allclose(M, oracle.oracle_mass(mesh), atol=1e-13)
    assert np.all(np.linalg.eigvalsh(M) > 0)
    K = assemble_stiffness(mesh).toarray()
    assert np.allclose(K, oracle.oracle_stiffness(mesh), atol=1e-11 * max(1, np.abs(K).max()))
