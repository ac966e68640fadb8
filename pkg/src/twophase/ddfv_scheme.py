"""Regularised positivity-preserving DDFV residual.

Unknowns per phase are the non-Dirichlet nodes of a :class:`DdfvMesh`
(interior primal cells, Neumann boundary edges, non-Dirichlet vertices).
Fluxes are computed once per diamond with the ``K -> L`` / ``Ks -> Ls``
orientation and scattered with opposite signs, so the scheme is
conservative by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .ddfv_mesh import DdfvMesh, l1_weights
from .errors import InvalidParams
from .fluid import FluidModel, Phase, clamp_Z
from .state import SchemeBackend, State

__all__ = ["upwind_mobility", "flux_V", "capillary_flux", "DdfvScheme", "DiamondFluxes"]


def _upwind(mob_A, mob_B, dp):
    mob_A = np.asarray(mob_A, dtype=float)
    mob_B = np.asarray(mob_B, dtype=float)
    return np.where(np.asarray(dp) >= 0, mob_B, mob_A), np.minimum(mob_A, mob_B)


def upwind_mobility(fluid, phase, dp, s_A, s_B, eps=0.0):
    """``(M_up, M_min)`` of the eps-shifted mobility on an interface ``A -> B``.

    ``dp = p_B - p_A``; upwinding takes the ``B`` value when ``dp >= 0``
    (equality included).
    """
    return _upwind(fluid.mobility_eps(phase, s_A, eps), fluid.mobility_eps(phase, s_B, eps), dp)


def flux_V(tau, tau_star, eta_D, dKL, dKsLs, mob):
    """Projected phase velocities ``(V_KL, V_KsLs)`` on diamonds.

    ``mob`` is ``(M_K, M_L, M_Ks, M_Ls)``, already eps-shifted.
    """
    mK, mL, mKs, mLs = mob
    up, low = _upwind(mK, mL, dKL)
    up_s, low_s = _upwind(mKs, mLs, dKsLs)
    V = up * tau * dKL + np.sqrt(low) * np.sqrt(up_s) * eta_D * dKsLs
    V_s = up_s * tau_star * dKsLs + np.sqrt(low_s) * np.sqrt(up) * eta_D * dKL
    return V, V_s


def capillary_flux(tau, tau_star, dKL_pc, dKsLs_pc):
    """``(tau_KL d_KL(p_g - p_w), tau_KsLs d_KsLs(p_g - p_w))``."""
    return tau * dKL_pc, tau_star * dKsLs_pc


@dataclass(frozen=True)
class DiamondFluxes:
    """Per-phase, per-diamond pieces of the residual (for energy checks)."""

    rho: np.ndarray        # (2, 2, nd): phase, primal/dual
    conv: np.ndarray       # rho * V
    cap: np.ndarray        # eta * sign * rho * p_c flux
    mob_up: np.ndarray     # upwind eps-mobilities
    dp: np.ndarray         # pressure jumps
    accumulation: np.ndarray  # (2, n_nodes)


class DdfvScheme(SchemeBackend):
    """PP-DDFV scheme ``F^{eps,eta}`` on a fixed mesh.

    Parameters
    ----------
    mesh : DdfvMesh
    fluid : FluidModel
    porosity : float or (n_cells,) array
        Piecewise-constant porosity on primal cells.
    dt : float
    """

    def __init__(self, mesh: DdfvMesh, fluid: FluidModel, porosity=0.3, dt=0.01):
        if dt <= 0:
            raise InvalidParams("dt must be positive")
        phi = np.broadcast_to(np.asarray(porosity, dtype=float), (mesh.n_cells,)).copy()
        if np.any(phi <= 0):
            raise InvalidParams("porosity must be positive")
        self.mesh = mesh
        self.fluid = fluid
        self.dt = float(dt)
        self.cell_porosity = phi
        self.node_porosity = mesh.node_average(phi)
        self.pore_volume = mesh.node_measure * self.node_porosity

    @property
    def dof_count(self):
        return self.mesh.dof_count

    @property
    def porosity_bounds(self):
        return float(self.cell_porosity.min()), float(self.cell_porosity.max())

    def node_adjacency_dofs(self):
        idx = self.mesh.dof_nodes
        return self.mesh.node_adjacency()[idx][:, idx]

    @cached_property
    def norm_matrix(self):
        return self.mesh.tau_matrix()

    @cached_property
    def l1_weights(self):
        return l1_weights(self.mesh)

    def row_scale(self):
        """``m_A phi_A`` per row; boundary edges borrow their cell's value."""
        d = self.mesh.diamonds
        scale = self.pore_volume.copy()
        scale[d.L[d.boundary]] = self.pore_volume[d.K[d.boundary]]
        s = scale[self.mesh.dof_nodes]
        return np.concatenate([s, s])

    # ------------------------------------------------------------------
    def _full(self, state):
        return self.mesh.expand(state.p_g), self.mesh.expand(state.p_w)

    def fluxes(self, state, prev, eps=0.0, eta=0.0, regularize=True):
        if eps < 0 or eta < 0:
            raise InvalidParams("eps and eta must be non-negative")
        fluid, d, mesh = self.fluid, self.mesh.diamonds, self.mesh
        pg, pw = self._full(state)
        pg_n, pw_n = self._full(prev)
        s_g, _ = fluid.coupling_G(pg, pw)
        s_g_n, _ = fluid.coupling_G(pg_n, pw_n)
        dpc = (pg[d.L] - pw[d.L]) - (pg[d.K] - pw[d.K])
        dpc_s = (pg[d.Ls] - pw[d.Ls]) - (pg[d.Ks] - pw[d.Ks])
        pc_kl, pc_s = capillary_flux(d.tau, d.tau_star, dpc, dpc_s)
        nd = len(d)
        rho = np.empty((2, 2, nd))
        conv = np.empty((2, 2, nd))
        cap = np.zeros((2, 2, nd))
        mob_up = np.empty((2, 2, nd))
        dps = np.empty((2, 2, nd))
        acc = np.empty((2, mesh.n_nodes))
        for phase, p, p_n, s, s_n in ((Phase.GAS, pg, pg_n, s_g, s_g_n),
                                      (Phase.WETTING, pw, pw_n, 1.0 - s_g, 1.0 - s_g_n)):
            mob = fluid.mobility(phase, s)
            if regularize:
                mob = eps + mob
            dKL = p[d.L] - p[d.K]
            dS = p[d.Ls] - p[d.Ks]
            V, V_s = flux_V(d.tau, d.tau_star, d.eta, dKL, dS, (mob[d.K], mob[d.L], mob[d.Ks], mob[d.Ls]))
            r_kl = fluid.interface_density(phase, p[d.K], p[d.L])
            r_s = fluid.interface_density(phase, p[d.Ks], p[d.Ls])
            i = int(phase)
            rho[i] = r_kl, r_s
            conv[i] = r_kl * V, r_s * V_s
            if regularize:
                cap[i] = eta * phase.sign * r_kl * pc_kl, eta * phase.sign * r_s * pc_s
            mob_up[i, 0] = _upwind(mob[d.K], mob[d.L], dKL)[0]
            mob_up[i, 1] = _upwind(mob[d.Ks], mob[d.Ls], dS)[0]
            dps[i] = dKL, dS
            acc[i] = self.pore_volume * (fluid.rho(phase, p) * clamp_Z(s) - fluid.rho(phase, p_n) * s_n)
        return DiamondFluxes(rho=rho, conv=conv, cap=cap, mob_up=mob_up, dp=dps, accumulation=acc)

    def _scatter(self, fx):
        d, n = self.mesh.diamonds, self.mesh.n_nodes
        res = fx.accumulation.copy()
        total = fx.conv + fx.cap
        for i in range(2):
            f, f_s = self.dt * total[i, 0], self.dt * total[i, 1]
            res[i] += (np.bincount(d.L, weights=f, minlength=n) - np.bincount(d.K, weights=f, minlength=n)
                       + np.bincount(d.Ls, weights=f_s, minlength=n) - np.bincount(d.Ks, weights=f_s, minlength=n))
        idx = self.mesh.dof_nodes
        return np.concatenate([res[0, idx], res[1, idx]])

    def residual(self, state, prev, eps=0.0, eta=0.0):
        """``F^{eps,eta}(state, prev)``, gas rows then wetting rows."""
        return self._scatter(self.fluxes(state, prev, eps, eta))

    def base_residual(self, state, prev):
        """Unregularised scheme, assembled without the eps and eta terms."""
        return self._scatter(self.fluxes(state, prev, regularize=False))

    # ------------------------------------------------------------------
    def g_full(self, state):
        pg, pw = self._full(state)
        return np.stack([self.fluid.g(Phase.GAS, pg), self.fluid.g(Phase.WETTING, pw)])

    def energy_terms(self, state, prev, eps=0.0, eta=0.0):
        """Split of ``<F, g(p)>`` into accumulation, convection, capillarity.

        Returns ``dict`` with ``gamma1``, ``gamma2``, ``gamma3`` (diamond sums
        after discrete integration by parts) and ``pairing`` (row-wise dot
        product with the assembled residual).
        """
        fx = self.fluxes(state, prev, eps, eta)
        g = self.g_full(state)
        d, idx = self.mesh.diamonds, self.mesh.dof_nodes
        gamma1 = float(np.sum(fx.accumulation[:, idx] * g[:, idx]))
        dg = np.stack([np.stack([gi[d.L] - gi[d.K], gi[d.Ls] - gi[d.Ks]]) for gi in g])
        gamma2 = float(self.dt * np.sum(fx.conv * dg))
        gamma3 = float(self.dt * np.sum(fx.cap * dg))
        res = self._scatter(fx)
        gvec = np.concatenate([g[0, idx], g[1, idx]])
        return {"gamma1": gamma1, "gamma2": gamma2, "gamma3": gamma3,
                "pairing": float(res @ gvec), "g_norm": float(np.linalg.norm(gvec)),
                "fluxes": fx}

    def convective_quadratic_form(self, fx):
        """``dt sum M_up tau (dp)^2`` over both phases and both diamond edges."""
        d = self.mesh.diamonds
        w = np.stack([d.tau, d.tau_star])
        return float(self.dt * np.sum(fx.mob_up * w * fx.dp ** 2))

    def capillary_quadratic_form(self, state):
        """``||p_g - p_w||_{T,tau}^2``."""
        u = state.p_g - state.p_w
        return float(u @ (self.norm_matrix @ u))

    def pressure_quadratic_form(self, u_dof):
        """``||u||_{T,tau}^2``."""
        return float(u_dof @ (self.norm_matrix @ u_dof))

    def accumulation_constants(self, prev):
        """``sum_alpha |H_alpha(p^n_alpha)|_{1,T}``."""
        w = self.l1_weights
        return float(sum(np.sum(w * np.abs(self.fluid.H(ph, p)))
                         for ph, p in ((Phase.GAS, prev.p_g), (Phase.WETTING, prev.p_w))))

    def energy_constant_factor(self):
        """Factor in front of ``phi_1`` in ``C_n`` and ``C_gamma1``."""
        return 2.0

    def state_from_fields(self, p_g_fun, p_w_fun):
        """Sample ``p(x, y)`` callables on the unknown node centres."""
        xy = self.mesh.node_xy[self.mesh.dof_nodes]
        return State(np.asarray(p_g_fun(xy[:, 0], xy[:, 1]), float) * np.ones(len(xy)),
                     np.asarray(p_w_fun(xy[:, 0], xy[:, 1]), float) * np.ones(len(xy)), self.fluid)

    def dof_coordinates(self):
        return self.mesh.node_xy[self.mesh.dof_nodes]
