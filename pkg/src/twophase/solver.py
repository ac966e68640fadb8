"""Damped Newton, the (eps, eta) continuation ladder and the time loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContinuationFailed, InvalidParams, SingularLinearization, Stagnation
from .state import State

__all__ = ["linear_solve", "newton_solve", "NewtonResult", "default_ladder", "make_ladder",
           "continuation_solve", "ContinuationTrace", "Rung", "time_loop", "TimeLoopResult",
           "existence_radius", "scaled_residual_norm"]

log = logging.getLogger(__name__)


def linear_solve(matrix, rhs, pivot_tol=1e-14, residual_tol=1e-12):
    """Direct sparse solve with a pivot and residual check.

    Raises
    ------
    SingularLinearization
        If a pivot of the LU factors is below ``pivot_tol * ||A||_1`` or the
        relative residual exceeds ``residual_tol`` after one refinement step.
    """
    A = sp.csc_matrix(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise ValueError("square system with matching right-hand side required")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    anorm = spla.norm(A, 1)
    try:
        lu = spla.splu(A)
    except RuntimeError as err:
        raise SingularLinearization(str(err)) from err
    if np.min(np.abs(lu.U.diagonal())) <= pivot_tol * anorm:
        raise SingularLinearization("near-zero pivot in sparse LU")
    x = lu.solve(b)
    r = b - A @ x
    if np.linalg.norm(r) > residual_tol * bnorm:
        x = x + lu.solve(r)
        r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    if not np.isfinite(rel) or rel > residual_tol:
        raise SingularLinearization(f"relative linear residual {rel:.3e} above {residual_tol:g}")
    return x


def scaled_residual_norm(backend, f):
    """``max |F_A| / (m_A phi_A)``."""
    return float(np.max(np.abs(f) / backend.row_scale())) if len(f) else 0.0


@dataclass
class NewtonResult:
    state: State
    iterations: int
    residual_norm: float
    history: list


def _pin_inactive(J, rhs, satisfied, rel=1e-14):
    """Freeze unknowns whose Jacobian row vanishes and whose equation already holds.

    With degenerate mobilities an unknown without accumulation (a Neumann
    boundary edge) drops out of the system; its Newton update is set to 0.
    """
    J = sp.csr_matrix(J)
    if J.nnz == 0:
        return J, rhs
    row_max = abs(J).max(axis=1).toarray().ravel()
    pinned = (row_max <= rel * row_max.max()) & satisfied
    if not pinned.any():
        return J, rhs
    keep = sp.diags((~pinned).astype(float))
    J = keep @ J @ keep + sp.diags(pinned.astype(float))
    rhs = np.where(pinned, 0.0, rhs)
    return J.tocsr(), rhs


def newton_solve(backend, prev, eps, eta, initial=None, tol=1e-10, max_iter=50,
                 max_halvings=20, armijo=1e-4):
    """Solve ``F^{eps,eta}(x, prev) = 0`` by damped Newton.

    The step is halved until the scaled residual 2-norm satisfies a
    sufficient-decrease test. Convergence is declared on the scaled
    infinity norm (see :func:`scaled_residual_norm`).

    Raises
    ------
    SingularLinearization, Stagnation
    """
    if tol <= 0:
        raise InvalidParams("tol must be positive")
    fluid = backend.fluid
    scale = backend.row_scale()
    x = (prev if initial is None else initial).vector.copy()
    f = backend.residual_vector(x, prev, eps, eta)
    norm = float(np.max(np.abs(f) / scale)) if len(f) else 0.0
    history = [norm]
    for it in range(max_iter + 1):
        if norm <= tol:
            return NewtonResult(State.from_vector(x, fluid), it, norm, history)
        if it == max_iter:
            break
        J = backend.jacobian(State.from_vector(x, fluid), prev, eps, eta, f0=f)
        dx = linear_solve(*_pin_inactive(J, -f, np.abs(f) / scale <= tol))
        merit = np.linalg.norm(f / scale)
        t = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + t * dx
            f_try = backend.residual_vector(x_try, prev, eps, eta)
            if np.all(np.isfinite(f_try)) and np.linalg.norm(f_try / scale) <= (1 - armijo * t) * merit:
                break
            t *= 0.5
        else:
            raise Stagnation(f"line search exhausted at iteration {it} (residual {norm:.3e})")
        x, f = x_try, f_try
        norm = float(np.max(np.abs(f) / scale))
        history.append(norm)
    raise Stagnation(f"no convergence in {max_iter} iterations (residual {norm:.3e})")


# ----------------------------------------------------------------------
def make_ladder(eps_list, eta_list):
    """Rungs ``(eps_k, eta_0)`` followed by ``(0, eta_k)``.

    Both lists must decrease strictly and end at 0.
    """
    for name, vals in (("eps", eps_list), ("eta", eta_list)):
        vals = list(vals)
        if not vals or vals[-1] != 0:
            raise InvalidParams(f"{name} list must end at 0")
        if any(a <= b for a, b in zip(vals, vals[1:])) or min(vals) < 0:
            raise InvalidParams(f"{name} list must be strictly decreasing and non-negative")
    eta0 = float(eta_list[0])
    return [(float(e), eta0) for e in eps_list] + [(0.0, float(h)) for h in eta_list[1:]]


def default_ladder(eps0=0.1, eta0=1e-2, factor=4.0, levels=9):
    """``eps0 * factor^-k`` then 0 at ``eta0``; then ``eta0 * factor^-k`` then 0."""
    eps = [eps0 * factor ** -k for k in range(levels)] + [0.0]
    eta = [eta0 * factor ** -k for k in range(levels)] + [0.0]
    return make_ladder(eps, eta)


@dataclass
class Rung:
    eps: float
    eta: float
    iterations: int
    residual_norm: float
    sat_min: float
    sat_max: float
    p_norm: float
    xi_norm: float
    pc_norm: float
    pg_norm: float
    pw_norm: float
    distance: float
    inserted: bool = False
    state: State | None = field(default=None, repr=False)

    def record(self):
        out = asdict(self)
        out.pop("state")
        return out


@dataclass
class ContinuationTrace:
    rungs: list = field(default_factory=list)

    def __len__(self):
        return len(self.rungs)

    def __iter__(self):
        return iter(self.rungs)

    def records(self):
        return [r.record() for r in self.rungs]


def _intermediate(accepted, target):
    (e0, h0), (e1, h1) = accepted, target
    def between(a, b):
        return a / 4.0 if b == 0 else float(np.sqrt(a * b))
    if e0 != e1:
        return between(e0, e1), h1
    return e1, between(h0, h1)


def _rung(backend, eps, eta, result, previous, inserted):
    st = result.state
    s_g = st.s_g
    p_norm, xi_norm = backend.zeta_norms(st)
    pg_norm, pw_norm = backend.phase_norms(st)
    dist = float(np.max(np.abs(st.vector - previous.vector))) if len(st) else 0.0
    return Rung(eps=eps, eta=eta, iterations=result.iterations, residual_norm=result.residual_norm,
                sat_min=float(min(s_g.min(), (1 - s_g).min())) if len(st) else 0.0,
                sat_max=float(max(s_g.max(), (1 - s_g).max())) if len(st) else 1.0,
                p_norm=p_norm, xi_norm=xi_norm, pc_norm=backend.norm_of_difference(st),
                pg_norm=pg_norm, pw_norm=pw_norm, distance=dist, inserted=inserted, state=st)


def continuation_solve(backend, prev, ladder=None, initial=None, tol=1e-10, max_iter=50,
                       max_refinements=5, keep_states=True):
    """Walk the ladder of ``(eps, eta)`` rungs with warm starts.

    A failing rung triggers insertion of an intermediate rung between it
    and the last accepted one (geometric mean, or a quarter of the
    predecessor when the target is 0), at most ``max_refinements`` times
    per ladder rung.

    Returns
    -------
    (State, ContinuationTrace)
    """
    ladder = default_ladder() if ladder is None else [tuple(map(float, r)) for r in ladder]
    state = prev if initial is None else initial
    trace = ContinuationTrace()
    pending = [(r, False) for r in reversed(ladder)]
    accepted = None
    refinements = 0
    while pending:
        (eps, eta), inserted = pending[-1]
        try:
            res = newton_solve(backend, prev, eps, eta, initial=state, tol=tol, max_iter=max_iter)
        except (SingularLinearization, Stagnation) as err:
            log.debug("rung eps=%g eta=%g failed: %s", eps, eta, err)
            if accepted is None or refinements >= max_refinements:
                raise ContinuationFailed(f"rung eps={eps:g}, eta={eta:g} failed: {err}",
                                         last_good=state if accepted else None, trace=trace) from err
            pending.append((_intermediate(accepted, (eps, eta)), True))
            refinements += 1
            continue
        pending.pop()
        rung = _rung(backend, eps, eta, res, state, inserted)
        norms = (rung.p_norm, rung.xi_norm, rung.pc_norm, rung.pg_norm, rung.pw_norm)
        if not np.all(np.isfinite(norms)):
            raise ContinuationFailed(f"non-finite norm at eps={eps:g}, eta={eta:g}",
                                     last_good=state, trace=trace)
        if not keep_states:
            rung.state = None
        trace.rungs.append(rung)
        state, accepted = res.state, (eps, eta)
        if not inserted:
            refinements = 0
    return state, trace


# ----------------------------------------------------------------------
@dataclass
class TimeLoopResult:
    times: list
    states: list
    traces: list


def time_loop(backend, initial_state, t_final, dt=None, ladder=None, tol=1e-10, max_iter=50,
              callback=None, keep_states=False):
    """Implicit Euler steps up to ``t_final``, one continuation per step.

    ``dt`` defaults to (and must agree with) the backend step.
    """
    dt = backend.dt if dt is None else float(dt)
    if not np.isclose(dt, backend.dt, rtol=1e-12, atol=0):
        raise InvalidParams("dt differs from the backend time step")
    n_steps = int(round(t_final / dt))
    if n_steps < 0 or not np.isclose(n_steps * dt, t_final, rtol=1e-9, atol=1e-12):
        raise InvalidParams("t_final must be a non-negative multiple of dt")
    s = initial_state.s_g
    if len(s) and (s.min() < -1e-12 or s.max() > 1 + 1e-12):
        raise InvalidParams("initial saturations outside [0, 1]")
    out = TimeLoopResult(times=[0.0], states=[initial_state], traces=[])
    state = initial_state
    for n in range(n_steps):
        try:
            state, trace = continuation_solve(backend, state, ladder, tol=tol, max_iter=max_iter,
                                              keep_states=keep_states)
        except ContinuationFailed as err:
            err.step = n + 1
            raise
        out.times.append((n + 1) * dt)
        out.states.append(state)
        out.traces.append(trace)
        if callback is not None:
            callback(n + 1, state, trace)
    return out


def existence_radius(C_n, C_gamma1, eps, eta, dt, nu):
    """Positive root of ``dt nu eps r^2 - sqrt(2) C_gamma1 r - C_n = 0``.

    ``eta`` does not enter the quadratic; it is accepted for symmetry with
    the other diagnostics.
    """
    a = dt * nu * eps
    if not a > 0:
        raise InvalidParams("eps * dt * nu must be positive")
    b = np.sqrt(2.0) * C_gamma1
    return float((b + np.sqrt(b * b + 4.0 * a * C_n)) / (2.0 * a))
