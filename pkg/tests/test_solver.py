import numpy as np
import pytest
import scipy.sparse as sp

from conftest import make_backend
from twophase.errors import ContinuationFailed, InvalidParams, SingularLinearization, Stagnation
from twophase.fluid import FluidModel
from twophase.profiles import initial_state
from twophase.solver import (_intermediate, _pin_inactive, continuation_solve, default_ladder, existence_radius,
                             linear_solve, make_ladder, newton_solve, scaled_residual_norm,
                             time_loop)
from twophase.state import State

LINEAR = FluidModel(mobility_exponent=0, rho_steepness_g=0, rho_steepness_w=0)


# -- linear solves -----------------------------------------------------
def test_linear_identity():
    b = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(linear_solve(sp.identity(3), b), b)


def test_linear_diagonal():
    assert np.allclose(linear_solve(sp.diags([2.0, 4.0]), [2.0, 8.0]), [1.0, 2.0], rtol=0, atol=1e-15)


def test_linear_random_spd(rng):
    M = rng.standard_normal((50, 50))
    A = M @ M.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    assert np.allclose(linear_solve(sp.csr_matrix(A), b), np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)


def test_linear_singular():
    with pytest.raises(SingularLinearization):
        linear_solve(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]])), [1.0, 0.0])


def test_linear_zero_rhs():
    assert np.array_equal(linear_solve(sp.identity(2), [0.0, 0.0]), [0.0, 0.0])


def test_linear_shape_check():
    with pytest.raises(ValueError):
        linear_solve(sp.identity(2), [1.0, 2.0, 3.0])


# -- Newton ------------------------------------------------------------
def test_newton_zero_state():
    b = make_backend("ddfv", 4)
    z = b.zero_state()
    r = newton_solve(b, z, 0.01, 0.01)
    assert r.iterations == 0 and r.residual_norm == 0.0


def test_newton_linear_one_step():
    """Linear residual: one Newton step reaches the finite-difference Jacobian's accuracy."""
    for kind in ("ddfv", "cvfe"):
        b = make_backend(kind, 4, fluid=LINEAR)
        s0 = initial_state(b, "bump")
        r = newton_solve(b, s0, 0.0, 0.0, tol=1e-8)
        assert r.iterations == 1


def test_newton_quadratic_convergence():
    b = make_backend("ddfv", 4)
    s0 = initial_state(b, "bump")
    r = newton_solve(b, s0, 0.01, 0.01)
    h = r.history
    assert h[-1] <= 1e-10
    ratios = [h[k + 1] / h[k] ** 2 for k in range(len(h) - 3, len(h) - 1)]
    assert max(ratios) < 1e2


def test_newton_warm_start_idempotent():
    b = make_backend("cvfe", 4, split="acute")
    s0 = initial_state(b, "bump")
    r = newton_solve(b, s0, 0.0, 0.01)
    again = newton_solve(b, s0, 0.0, 0.01, initial=r.state)
    assert again.iterations == 0
    assert np.max(np.abs(again.state.vector - r.state.vector)) <= 1e-12


def test_newton_stagnation():
    b = make_backend("ddfv", 4)
    s0 = initial_state(b, "bump")
    with pytest.raises(Stagnation):
        newton_solve(b, s0, 0.01, 0.01, max_iter=1)


def test_newton_bad_tol():
    b = make_backend("ddfv", 2)
    with pytest.raises(InvalidParams):
        newton_solve(b, b.zero_state(), 0, 0, tol=0.0)


def test_pin_inactive():
    J = sp.csr_matrix(np.array([[2.0, 1.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 3.0]]))
    A, rhs = _pin_inactive(J, np.array([1.0, 0.0, 2.0]), np.array([False, True, False]))
    assert np.array_equal(A.toarray(), [[2, 0, 0], [0, 1, 0], [1, 0, 3]]) and rhs[1] == 0
    # an unsatisfied zero row stays singular
    A, _ = _pin_inactive(J, np.ones(3), np.zeros(3, bool))
    with pytest.raises(SingularLinearization):
        linear_solve(A, np.ones(3))


def test_continuation_vanishing_phases():
    """Saturations reaching 0 and 1 leave boundary-edge unknowns inactive at (0, 0)."""
    b = make_backend("ddfv", 6)
    s0 = initial_state(b, "drainage", s_background=0.0, s_high=1.0, front=0.5)
    st, tr = continuation_solve(b, s0)
    assert scaled_residual_norm(b, b.residual(st, s0, 0.0, 0.0)) <= 1e-10
    assert -1e-12 <= tr.rungs[-1].sat_min and tr.rungs[-1].sat_max <= 1 + 1e-12


def test_scaled_norm():
    b = make_backend("ddfv", 3)
    f = np.ones(2 * b.dof_count)
    assert scaled_residual_norm(b, f) == pytest.approx(np.max(1.0 / b.row_scale()))


# -- ladders -----------------------------------------------------------
def test_default_ladder_shape():
    lad = default_ladder()
    assert len(lad) == 19
    assert lad[0] == (0.1, 1e-2) and lad[9] == (0.0, 1e-2) and lad[-1] == (0.0, 0.0)
    assert lad[10] == (0.0, 1e-2 / 4)
    # no eta reduction before eps reaches 0
    first_eta_drop = next(i for i, r in enumerate(lad) if r[1] < lad[0][1])
    assert all(r[0] == 0 for r in lad[first_eta_drop:])
    assert lad[first_eta_drop - 1][0] == 0


@pytest.mark.parametrize("eps,eta", [([0.1, 0.2, 0], [0]), ([0.1], [0]), ([0.1, 0], [0.1, 0.1, 0]),
                                     ([0.1, -0.1, 0], [0]), ([], [0])])
def test_make_ladder_rejects(eps, eta):
    with pytest.raises(InvalidParams):
        make_ladder(eps, eta)


def test_trivial_ladder():
    assert make_ladder([0], [0]) == [(0.0, 0.0)]


def test_intermediate_rungs():
    assert _intermediate((0.1, 0.01), (0.025, 0.01)) == (pytest.approx(0.05), 0.01)
    assert _intermediate((0.001, 0.01), (0.0, 0.01)) == (0.00025, 0.01)
    assert _intermediate((0.0, 0.01), (0.0, 0.0025)) == (0.0, pytest.approx(0.005))


# -- continuation ------------------------------------------------------
def test_continuation_trivial():
    b = make_backend("ddfv", 4)
    z = b.zero_state()
    st, tr = continuation_solve(b, z, [(0.0, 0.0)])
    assert len(tr) == 1 and tr.rungs[0].iterations == 0
    assert np.all(st.vector == 0)


@pytest.mark.parametrize("kind", ["ddfv", "cvfe"])
def test_continuation_default(kind):
    b = make_backend(kind, 4)
    s0 = initial_state(b, "bump")
    st, tr = continuation_solve(b, s0)
    assert len(tr) >= 19
    assert np.max(np.abs(b.residual(st, s0, 0.0, 0.0)) / b.row_scale()) <= 1e-10
    for r in tr:
        assert r.residual_norm <= 1e-10
        if r.eps == 0:
            assert -1e-12 <= r.sat_min and r.sat_max <= 1 + 1e-12
    assert tr.rungs[0].state is not None
    assert "state" not in tr.records()[0]


def test_continuation_first_rung_failure():
    b = make_backend("ddfv", 4)
    s0 = initial_state(b, "bump")
    with pytest.raises(ContinuationFailed) as info:
        continuation_solve(b, s0, max_iter=0)
    assert info.value.last_good is None


def test_continuation_refinement_inserts_rungs(monkeypatch):
    """A rung that fails once is retried after an inserted intermediate rung."""
    import twophase.solver as S
    real = S.newton_solve
    failed = {"done": False}

    def flaky(backend, prev, eps, eta, **kw):
        if eps == 0.0 and eta == 1e-2 and not failed["done"]:
            failed["done"] = True
            raise Stagnation("injected")
        return real(backend, prev, eps, eta, **kw)

    monkeypatch.setattr(S, "newton_solve", flaky)
    b = make_backend("ddfv", 3)
    s0 = initial_state(b, "bump")
    _, tr = continuation_solve(b, s0, make_ladder([0.1, 0.0], [1e-2, 0.0]))
    eps = [r.eps for r in tr]
    assert eps == [0.1, 0.025, 0.0, 0.0]
    assert [r.inserted for r in tr] == [False, True, False, False]


def test_continuation_refinements_exhausted(monkeypatch):
    import twophase.solver as S
    real = S.newton_solve

    def broken(backend, prev, eps, eta, **kw):
        if eps < 0.1:
            raise Stagnation("injected")
        return real(backend, prev, eps, eta, **kw)

    monkeypatch.setattr(S, "newton_solve", broken)
    b = make_backend("ddfv", 3)
    s0 = initial_state(b, "bump")
    with pytest.raises(ContinuationFailed) as info:
        continuation_solve(b, s0, make_ladder([0.1, 0.0], [1e-2, 0.0]), max_refinements=5)
    assert info.value.last_good is not None and len(info.value.trace) == 1


# -- time loop ---------------------------------------------------------
def test_time_loop_zero():
    b = make_backend("cvfe", 3)
    out = time_loop(b, b.zero_state(), 0.03)
    assert len(out.states) == 4 and all(np.all(s.vector == 0) for s in out.states)
    assert out.times == pytest.approx([0, 0.01, 0.02, 0.03])


def test_time_loop_single_step_matches_continuation():
    b = make_backend("ddfv", 3)
    s0 = initial_state(b, "bump")
    out = time_loop(b, s0, 0.01)
    st, _ = continuation_solve(b, s0)
    assert np.array_equal(out.states[-1].vector, st.vector)


def test_time_loop_validation():
    b = make_backend("ddfv", 3)
    z = b.zero_state()
    with pytest.raises(InvalidParams):
        time_loop(b, z, 0.03, dt=0.02)
    with pytest.raises(InvalidParams):
        time_loop(b, z, 0.015)
    bad = State(np.full(b.dof_count, 1.5), np.zeros(b.dof_count), b.fluid)
    with pytest.raises(InvalidParams):
        time_loop(b, bad, 0.01)


def test_time_loop_failure_carries_step():
    b = make_backend("ddfv", 3)
    s0 = initial_state(b, "bump")
    with pytest.raises(ContinuationFailed) as info:
        time_loop(b, s0, 0.02, max_iter=0)
    assert info.value.step == 1


# -- existence radius --------------------------------------------------
def test_existence_radius():
    assert existence_radius(0.0, 0.0, 1.0, 0.0, 1.0, 1.0) == 0.0
    assert existence_radius(0.0, 1 / np.sqrt(2), 1.0, 0.0, 1.0, 1.0) == pytest.approx(1.0)
    assert existence_radius(5.0, 3 / np.sqrt(2), 2.0, 0.0, 1.0, 1.0) == pytest.approx(2.5)
    with pytest.raises(InvalidParams):
        existence_radius(1.0, 1.0, 0.0, 0.0, 1.0, 1.0)
