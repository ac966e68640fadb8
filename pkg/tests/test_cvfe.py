import numpy as np
import pytest

import oracles
from conftest import make_backend, random_state
from twophase.cvfe import (CvfeScheme, build_from_triangles, build_triangulation, dual_polygons,
                           p1_gradients, stiffness_coeffs, upwind_saturation_cvfe)
from twophase.discrete import boundary_sides, shoelace
from twophase.errors import InvalidMesh
from twophase.verify import poincare_constant

UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
ANISO = np.array([[1.0, -0.5], [-0.5, 1.0]])


# -- element quantities ------------------------------------------------
def test_unit_triangle_coefficients():
    c = stiffness_coeffs(UNIT)            # pairs (0,1), (1,2), (2,0)
    assert abs(c[0] - 0.5) <= 1e-14 and abs(c[1]) <= 1e-14 and abs(c[2] - 0.5) <= 1e-14


def test_unit_triangle_gradients():
    g, area = p1_gradients(UNIT)
    assert area == 0.5
    assert np.allclose(g, [[-1, -1], [1, 0], [0, 1]], atol=0)


def test_gradients_match_vandermonde(rng):
    tri = rng.uniform(0, 1, (3, 2))
    if np.linalg.det(np.column_stack([np.ones(3), tri])) < 0:
        tri = tri[[0, 2, 1]]
    g, area = p1_gradients(tri)
    g_ref, area_ref = oracles.p1_coefficients(tri)
    assert np.allclose(g, g_ref, rtol=1e-10, atol=1e-12) and area == pytest.approx(area_ref)


def test_equilateral_equal_positive():
    tri = np.array([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])
    c = stiffness_coeffs(tri)
    assert np.all(c > 0) and np.ptp(c) < 1e-14
    assert c[0] == pytest.approx(0.5 / np.tan(np.pi / 3), rel=1e-14)


def test_obtuse_has_negative():
    c = stiffness_coeffs(np.array([[0, 0], [4, 0], [3.9, 0.3]]))
    assert c.min() < 0


def test_coefficients_symmetric_and_row_sums(rng):
    tri = np.array([[0, 0], [1.2, 0.1], [0.3, 0.9]])
    lam = np.array([[2.0, 0.3], [0.3, 0.5]])
    g, area = p1_gradients(tri)
    c = stiffness_coeffs(tri, lam)
    full = -area * g @ lam @ g.T
    assert np.allclose(full, full.T, rtol=0, atol=1e-15)
    for (a, b), v in zip([(0, 1), (1, 2), (2, 0)], c):
        assert v == pytest.approx(full[a, b], rel=1e-14)
    # sum_L grad phi_L = 0 => each diagonal entry balances its row
    assert np.allclose(full.sum(axis=1), 0.0, atol=1e-14)


def test_dual_parts_unit_triangle():
    parts = shoelace(dual_polygons(UNIT))
    assert np.allclose(parts, 1.0 / 6.0, rtol=1e-14)
    assert parts.sum() == pytest.approx(0.5, rel=1e-15)
    assert np.all(parts > 0)                      # counter-clockwise


def test_dual_parts_general(rng):
    tri = np.array([[0, 0], [3.0, 0.4], [0.7, 2.0]])
    parts = shoelace(dual_polygons(tri))
    assert np.allclose(parts, parts.sum() / 3, rtol=1e-13)   # barycentric cut: equal thirds
    assert parts.sum() == pytest.approx(shoelace(tri), rel=1e-14)


# -- upwinding ---------------------------------------------------------
def test_upwind_positive():
    assert upwind_saturation_cvfe(0.2, 0.3, 0.8, np.array([0.3, 0.8, 0.1]), 1.0) == 0.8
    assert upwind_saturation_cvfe(-0.2, 0.3, 0.8, np.array([0.3, 0.8, 0.1]), 1.0) == 0.3
    assert upwind_saturation_cvfe(0.0, 0.3, 0.8, np.array([0.3, 0.8, 0.1]), 0.0) == 0.8


def test_upwind_negative():
    assert upwind_saturation_cvfe(0.2, 0.3, 0.8, np.array([0.3, 0.8, 0.1]), -0.1) == 0.1


def test_upwind_uniform():
    for c in (-1.0, 0.0, 1.0):
        for dp in (-1.0, 1.0):
            assert upwind_saturation_cvfe(dp, 0.4, 0.4, np.full(3, 0.4), c) == 0.4


# -- mesh --------------------------------------------------------------
@pytest.mark.parametrize("split", ["diagonal", "acute"])
def test_triangulation_2x2(split):
    m = build_triangulation(2, 2, boundary_sides("all"), split)
    assert len(m.triangles) == 8 and m.n_vertices == 9
    assert m.dual_volume.sum() == pytest.approx(1.0, abs=1e-12)
    assert m.area.sum() == pytest.approx(1.0, abs=1e-12)
    assert m.dof_count == 1


def test_dirichlet_predicate():
    m = build_triangulation(4, 4, boundary_sides("left"))
    x = m.vertices[:, 0]
    interior = (x > 0) & (x < 1) & (m.vertices[:, 1] > 0) & (m.vertices[:, 1] < 1)
    assert not m.dirichlet[interior].any()
    assert np.array_equal(m.dirichlet, np.isclose(x, 0.0))


def test_acute_split_nonnegative():
    assert build_triangulation(8, 8, split="acute").coeffs.min() >= 0
    assert build_triangulation(8, 8, split="diagonal").coeffs.min() >= 0


def test_diagonal_split_anisotropic_negative():
    m = build_triangulation(8, 8, split="diagonal", permeability=ANISO)
    assert m.stats()["negative_coefficients"] == 128


def test_orientation_fixed():
    m = build_from_triangles(UNIT, [[0, 2, 1]], boundary_sides("all"))
    assert m.area[0] == 0.5 and np.allclose(m.coeffs, [0.5, 0.0, 0.5], atol=1e-15)


def test_degenerate_rejected():
    with pytest.raises(InvalidMesh):
        build_from_triangles([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], boundary_sides("all"))


def test_nonconforming_rejected():
    v = [[0, 0], [1, 0], [0, 1], [0, -1], [0.2, -0.5]]
    with pytest.raises(InvalidMesh, match="non-conforming"):
        build_from_triangles(v, [[0, 1, 2], [0, 3, 1], [0, 4, 1]], boundary_sides("all"))


def test_unknown_split():
    with pytest.raises(InvalidMesh):
        build_triangulation(2, 2, split="zigzag")


# -- residual ----------------------------------------------------------
@pytest.mark.parametrize("split", ["diagonal", "acute"])
def test_zero_state(split):
    b = make_backend("cvfe", 4, split=split, permeability=ANISO)
    z = b.zero_state()
    assert np.all(b.residual(z, z, 0.05, 0.01) == 0.0)


def test_regularization_off_is_base(rng):
    b = make_backend("cvfe", 4, permeability=ANISO)
    for _ in range(5):
        st, pv = random_state(b, rng, (-2, 2), (-0.2, 1.2)), random_state(b, rng)
        assert np.array_equal(b.residual(st, pv, 0.0, 0.0), b.base_residual(st, pv))


@pytest.mark.parametrize("split,lam", [("diagonal", ANISO), ("acute", np.eye(2)),
                                       ("acute", np.array([[1.0, 0.5], [0.5, 1.0]]))])
def test_matches_naive_oracle(rng, split, lam):
    b = make_backend("cvfe", 2, split=split, permeability=lam)
    for _ in range(4):
        st, pv = random_state(b, rng, (-2, 2), (-0.3, 1.3)), random_state(b, rng)
        eps, eta = rng.uniform(0, 0.1), rng.uniform(0, 0.01)
        a = b.residual(st, pv, eps, eta)
        ref = oracles.cvfe_naive_residual(b.mesh, b.fluid, 0.3, b.dt, lam, st, pv, eps, eta)
        assert np.linalg.norm(a - ref) <= 1e-12 * np.linalg.norm(ref)


def test_negative_branch_counter(rng):
    b = make_backend("cvfe", 8, permeability=ANISO)
    st = random_state(b, rng)
    assert b.pair_terms(st, st).negative_branch == 128


def test_jacobian_pattern(rng):
    b = make_backend("cvfe", 3, split="acute")
    st, pv = random_state(b, rng), random_state(b, rng)
    J = b.jacobian(st, pv, 0.01, 0.01).tocoo()
    P = b.jacobian_pattern.tocsr()
    nz = np.abs(J.data) > 0
    assert np.all(np.asarray(P[J.row[nz], J.col[nz]]).ravel())


# -- energy pieces -----------------------------------------------------
@pytest.mark.parametrize("split,lam", [("diagonal", ANISO), ("acute", np.eye(2))])
def test_gamma3_identity(rng, split, lam):
    b = make_backend("cvfe", 6, split=split, permeability=lam)
    st, pv = random_state(b, rng), random_state(b, rng)
    e = b.energy_terms(st, pv, 0.01, 0.004)
    assert e["gamma3"] == pytest.approx(0.004 * b.dt * b.capillary_quadratic_form(st), rel=1e-10)
    assert e["gamma3"] >= 0
    assert abs(e["gamma1"] + e["gamma2"] + e["gamma3"] - e["pairing"]) <= 1e-12 * (1 + abs(e["pairing"]))


def test_gamma2_positive_mesh(rng):
    b = make_backend("cvfe", 6, split="acute")
    for eps in (1e-2, 1e-4):
        st, pv = random_state(b, rng), random_state(b, rng)
        e = b.energy_terms(st, pv, eps, 0.0)
        assert e["gamma2"] == pytest.approx(b.convective_quadratic_form(e["fluxes"]), rel=1e-10)
        lower = b.dt * eps * sum(b.pressure_quadratic_form(p) for p in (st.p_g, st.p_w))
        assert e["gamma2"] >= lower


def test_poincare_bound(rng):
    b = make_backend("cvfe", 4, split="acute")
    C = poincare_constant(b, 1000, seed=0)
    w = b.l1_weights
    for _ in range(200):
        u = rng.standard_normal(b.dof_count)
        assert np.sqrt(np.sum(w * u * u)) <= C * (1 + 1e-6) * b.gradient_norm(u)


def test_porosity_per_triangle():
    m = build_triangulation(4, 4, split="acute")
    phi = np.where(m.vertices[m.triangles].mean(axis=1)[:, 1] > 0.5, 0.2, 0.3)
    b = CvfeScheme(m, make_backend("cvfe", 2).fluid, phi, 0.01)
    assert b.porosity_bounds == (0.2, 0.3)
    assert np.all((b.node_porosity >= 0.2 - 1e-15) & (b.node_porosity <= 0.3 + 1e-15))
