"""Numerical checks of the structural properties of the schemes.

Every check returns a small report object. Reports serialise to plain
dictionaries through :func:`as_record` so that a verification run can be
written as one record per check.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse.linalg as spla

from .discrete import l1_norm_constant
from .errors import TwoPhaseError
from .fluid import Phase
from .state import State

__all__ = ["MaxPrincipleReport", "EnergyReport", "SamplingReport", "MonitorReport",
           "RegularizationReport", "check_max_principle", "energy_decomposition", "check_lem1",
           "check_corrective_bounds", "continuation_monitors", "regularization_consistency",
           "norm_constant", "coercivity_ratio", "poincare_constant", "MonitorFailure", "as_record"]

SAT_SLACK = 1e-12


class MonitorFailure(TwoPhaseError):
    """A continuation monitor evaluated to a non-finite value."""


def as_record(name, report):
    rec = {"name": name}
    rec.update({k: v for k, v in asdict(report).items() if not isinstance(v, np.ndarray)})
    return rec


# ----------------------------------------------------------------------
@dataclass
class MaxPrincipleReport:
    sat_min: float
    sat_max: float
    passed: bool
    worst_dof: int | None = None
    worst_phase: str | None = None


def check_max_principle(backend, state, slack=SAT_SLACK):
    """Saturations of both phases lie in ``[-slack, 1 + slack]``."""
    s_g, s_w = backend.saturation_view(state)
    if len(s_g) == 0:
        return MaxPrincipleReport(0.0, 1.0, True)
    sats = {"gas": s_g, "wetting": s_w}
    lo = min(float(s.min()) for s in sats.values())
    hi = max(float(s.max()) for s in sats.values())
    passed = lo >= -slack and hi <= 1 + slack
    worst = None
    worst_phase = None
    if not passed:
        excess = {k: np.maximum(-s, s - 1.0) for k, s in sats.items()}
        worst_phase = max(excess, key=lambda k: excess[k].max())
        worst = int(np.argmax(excess[worst_phase]))
    return MaxPrincipleReport(lo, hi, passed, worst, worst_phase)


# ----------------------------------------------------------------------
def norm_constant(backend, n_fields=1000, seed=0):
    """Estimate of ``C`` in ``|u|_1 <= C ||u||`` for the backend's norms (cached)."""
    cache = backend.__dict__.setdefault("_norm_constant_cache", {})
    key = (n_fields, seed)
    if key not in cache:
        cache[key] = l1_norm_constant(backend.l1_weights, backend.norm_matrix, n_fields, seed)
    return cache[key]


def poincare_constant(backend, n_fields=1000, seed=0):
    """Empirical ``sup ||u||_{L2} / ||u||`` over random zero-Dirichlet fields.

    Uses the sign-free variant of the ascent in :func:`l1_norm_constant`:
    a few inverse-iteration sweeps from each random start.
    """
    A = backend.norm_matrix.tocsc()
    w = np.asarray(backend.l1_weights, dtype=float)
    solve = spla.factorized(A)
    rng = np.random.default_rng(seed)
    best = 0.0
    for u in rng.standard_normal((n_fields, len(w))):
        for _ in range(3):
            q = float(u @ (A @ u))
            best = max(best, np.sqrt(np.sum(w * u * u) / q))
            u = solve(w * u)
    return float(best)


@dataclass
class EnergyReport:
    gamma1: float
    gamma2: float
    gamma3: float
    direct_pairing: float
    g_norm: float
    p_norm: float
    xi_norm: float
    pc_norm: float
    C_n: float
    C_gamma1: float
    sat_min: float
    sat_max: float
    gamma3_expected: float
    gamma2_form: float
    pressure_form: float
    eps: float
    eta: float
    dt: float

    @property
    def sum_error(self):
        return abs(self.gamma1 + self.gamma2 + self.gamma3 - self.direct_pairing)

    @property
    def sum_identity_ok(self):
        return self.sum_error <= 1e-9 * (1 + abs(self.direct_pairing))


def energy_decomposition(backend, state, prev, eps=0.0, eta=0.0, norm_fields=1000, seed=0):
    """Split ``<F^{eps,eta}(state, prev), g(state)>`` into ``gamma1..3``.

    ``gamma_i`` come from the per-edge flux pieces after discrete
    integration by parts; ``direct_pairing`` is the dot product of the
    assembled residual with ``g``. ``gamma3_expected`` is
    ``eta * dt * (capillary quadratic form)`` and ``gamma2_form`` the
    explicit mobility-weighted quadratic form.
    """
    terms = backend.energy_terms(state, prev, eps, eta)
    p_norm, xi_norm = backend.zeta_norms(state)
    phi1 = backend.porosity_bounds[1]
    factor = backend.energy_constant_factor()
    mp = check_max_principle(backend, state)
    return EnergyReport(
        gamma1=terms["gamma1"], gamma2=terms["gamma2"], gamma3=terms["gamma3"],
        direct_pairing=terms["pairing"], g_norm=terms["g_norm"],
        p_norm=p_norm, xi_norm=xi_norm, pc_norm=backend.norm_of_difference(state),
        C_n=factor * phi1 * backend.accumulation_constants(prev),
        C_gamma1=factor * phi1 * norm_constant(backend, norm_fields, seed),
        sat_min=mp.sat_min, sat_max=mp.sat_max,
        gamma3_expected=eta * backend.dt * backend.capillary_quadratic_form(state),
        gamma2_form=backend.convective_quadratic_form(terms["fluxes"]),
        pressure_form=sum(backend.pressure_quadratic_form(p) for p in (state.p_g, state.p_w)),
        eps=float(eps), eta=float(eta), dt=backend.dt)


def coercivity_ratio(report):
    """Empirical ``nu = gamma2 / (dt eps sum_alpha ||p_alpha||^2)``."""
    denom = report.dt * report.eps * report.pressure_form
    return float("nan") if denom == 0 else report.gamma2 / denom


# ----------------------------------------------------------------------
@dataclass
class SamplingReport:
    passed: bool
    samples: int
    violations: int
    worst_ratio: float
    m0: float = float("nan")


def check_lem1(fluid, sample_count=10_000, p_range=(-3.0, 3.0), seed=0, rel_slack=1e-12):
    """Sample the global-pressure coercivity inequality on random point pairs.

    For pressures ``(p_g, p_w)`` at two points ``A`` and ``B`` checks
    ``m0 ((dp)^2 + (dxi)^2) <= M_g^up (dp_g)^2 + M_w^up (dp_w)^2`` with
    upwind mobilities chosen by the sign of each phase-pressure jump.
    ``worst_ratio`` is the largest left/right ratio.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    pg = rng.uniform(*p_range, size=(2, sample_count))
    pw = rng.uniform(*p_range, size=(2, sample_count))
    m0 = fluid.total_mobility_floor()
    s_g = fluid.pc_inverse(pg - pw)
    p = fluid.global_pressure(pg, s_g)
    xi = fluid.xi(s_g)
    dpg, dpw = pg[1] - pg[0], pw[1] - pw[0]
    mg = fluid.mobility(Phase.GAS, s_g)
    mw = fluid.mobility(Phase.WETTING, 1.0 - s_g)
    mg_up = np.where(dpg >= 0, mg[1], mg[0])
    mw_up = np.where(dpw >= 0, mw[1], mw[0])
    lhs = m0 * ((p[1] - p[0]) ** 2 + (xi[1] - xi[0]) ** 2)
    rhs = mg_up * dpg ** 2 + mw_up * dpw ** 2
    bad = lhs > rhs * (1 + rel_slack) + 1e-300
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    return SamplingReport(passed=not bad.any(), samples=sample_count, violations=int(bad.sum()),
                          worst_ratio=float(ratio.max()), m0=m0)


def check_corrective_bounds(fluid, sample_count=10_000, s_range=(-0.5, 1.5), seed=0, slack=1e-12):
    """``|p_hat_alpha(s)| <= |p_c(s)|`` for sampled saturations (with the end points)."""
    rng = np.random.default_rng(seed)
    s = np.concatenate([rng.uniform(*s_range, size=sample_count), [0.0, 1.0, *s_range]])
    pc = np.abs(fluid.pc(s))
    hg, hw = fluid.global_pressure_split(s)
    excess = np.maximum(np.abs(hg), np.abs(hw)) - pc
    bad = excess > slack
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(pc > 0, np.maximum(np.abs(hg), np.abs(hw)) / pc, 0.0)
    return SamplingReport(passed=not bad.any(), samples=len(s), violations=int(bad.sum()),
                          worst_ratio=float(ratio.max()))


# ----------------------------------------------------------------------
@dataclass
class MonitorReport:
    energy_left: list = field(default_factory=list)
    eps_ladder_max: float = 0.0
    eta_ladder_zeta_max: float = 0.0
    passed: bool = True


def continuation_monitors(trace):
    """Regularised energy left-hand side per rung and its maxima over both ladders.

    Raises
    ------
    MonitorFailure
        If any monitored quantity is not finite.
    """
    rungs = list(trace)
    if not rungs:
        raise ValueError("empty trace")
    eta0 = rungs[0].eta
    out = MonitorReport()
    for r in rungs:
        zeta = r.p_norm ** 2 + r.xi_norm ** 2
        left = zeta + r.eps * (r.pg_norm ** 2 + r.pw_norm ** 2) + r.eta * r.pc_norm ** 2
        if not (np.isfinite(zeta) and np.isfinite(left)):
            raise MonitorFailure(f"non-finite monitor at eps={r.eps:g}, eta={r.eta:g}")
        out.energy_left.append(float(left))
        if r.eta == eta0:
            out.eps_ladder_max = max(out.eps_ladder_max, float(left))
        if r.eps == 0:
            out.eta_ladder_zeta_max = max(out.eta_ladder_zeta_max, float(zeta))
    return out


# ----------------------------------------------------------------------
@dataclass
class RegularizationReport:
    bitwise_equal: bool
    K_estimate: float
    samples: int

    @property
    def passed(self):
        return self.bitwise_equal and np.isfinite(self.K_estimate)


def regularization_consistency(backend, sample_count=100, p_range=(-1.0, 1.0), seed=0,
                               eps_max=1e-2, eta_max=1e-2):
    """``F^{0,0} == F`` bit for bit and ``||F^{eps,eta} - F^{0,0}|| <= K (eps + eta)``.

    ``K`` is the largest observed ratio over random states and random
    ``(eps, eta)`` in ``(0, eps_max] x (0, eta_max]``.
    """
    rng = np.random.default_rng(seed)
    n = backend.dof_count
    equal = True
    K = 0.0
    for _ in range(sample_count):
        st = State(rng.uniform(*p_range, n), rng.uniform(*p_range, n), backend.fluid)
        pv = _admissible_state(backend, rng)
        base = backend.base_residual(st, pv)
        f00 = backend.residual(st, pv, 0.0, 0.0)
        equal &= bool(np.array_equal(base, f00))
        eps, eta = rng.uniform(1e-3 * eps_max, eps_max), rng.uniform(1e-3 * eta_max, eta_max)
        diff = np.linalg.norm(backend.residual(st, pv, eps, eta) - f00)
        K = max(K, diff / (eps + eta))
    return RegularizationReport(bitwise_equal=equal, K_estimate=float(K), samples=sample_count)


def _admissible_state(backend, rng):
    """Random state with saturations inside ``[0, 1]``."""
    n = backend.dof_count
    fl = backend.fluid
    s = rng.uniform(0.0, 1.0, n)
    p_w = rng.uniform(-1.0, 1.0, n)
    return State(p_w + fl.pc(s), p_w, fl)
