"""Constitutive model for compressible immiscible gas/wetting flow.

All functions are vectorised over numpy arrays. The model is immutable
once built; the lookup tables for the corrective pressures and the
capillary energy function are computed in ``__post_init__``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import minimize_scalar

from .errors import DegenerateModel, InvalidParams

__all__ = ["Phase", "FluidModel", "clamp_Z"]


class Phase(enum.IntEnum):
    """Phase tag; the integer value is the parity |alpha|."""

    GAS = 0
    WETTING = 1

    @property
    def parity(self) -> int:
        return int(self)

    @property
    def sign(self) -> float:
        """(-1)**parity, the sign of the capillary regularisation term."""
        return 1.0 if self is Phase.GAS else -1.0


def clamp_Z(s):
    """Projection of a saturation onto [0, 1]."""
    return np.clip(s, 0.0, 1.0)


N_TABLE_INTERVALS = 1024


@dataclass(frozen=True)
class FluidModel:
    """Capillary pressure, mobilities and densities of the two phases.

    Parameters
    ----------
    pc_slope : float
        Linear part ``a`` of ``p_c(s) = a*s + b*tanh(c*s)``.
    pc_tanh_amp, pc_tanh_rate : float
        ``b`` and ``c`` of the optional smooth term (default 0: linear law).
    mu_g, mu_w : float
        Dynamic viscosities.
    rho0, rho1 : float
        Density bounds; ``rho(p) = rho0 + (rho1-rho0)*(1+tanh(k*p))/2``.
    rho_steepness_g, rho_steepness_w : float
        ``k`` for each phase; 0 gives a constant density ``(rho0+rho1)/2``.
    mobility_exponent : float
        Corey exponent ``n`` in ``M(s) = s**n / mu``; 0 gives constant
        (non-degenerate) mobilities.
    quadrature_points : int
        Gauss-Legendre nodes per unit pressure interval.
    """

    pc_slope: float = 1.0
    pc_tanh_amp: float = 0.0
    pc_tanh_rate: float = 0.0
    mu_g: float = 1.0
    mu_w: float = 1.0
    rho0: float = 0.8
    rho1: float = 1.2
    rho_steepness_g: float = 0.5
    rho_steepness_w: float = 0.5
    mobility_exponent: float = 2.0
    quadrature_points: int = 32
    _tables: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.pc_slope <= 0 or self.pc_tanh_amp < 0 or self.pc_tanh_rate < 0:
            raise InvalidParams("capillary law must be strictly increasing")
        if self.mu_g <= 0 or self.mu_w <= 0:
            raise InvalidParams("viscosities must be positive")
        if not 0 < self.rho0 <= self.rho1:
            raise InvalidParams("need 0 < rho0 <= rho1")
        if self.rho_steepness_g < 0 or self.rho_steepness_w < 0:
            raise InvalidParams("density steepness must be non-negative")
        if self.mobility_exponent < 0:
            raise InvalidParams("mobility exponent must be non-negative (0: constant mobilities)")
        if self.quadrature_points < 2:
            raise InvalidParams("quadrature_points must be >= 2")
        nodes, weights = leggauss(int(self.quadrature_points))
        tables = {"gl": (nodes, weights)}
        object.__setattr__(self, "_tables", tables)
        tables.update(self._build_tables())

    # ------------------------------------------------------------------
    # capillary pressure
    @property
    def pc_derivative_bound(self) -> float:
        return self.pc_slope + self.pc_tanh_amp * self.pc_tanh_rate

    def pc(self, s):
        s = np.asarray(s, dtype=float)
        out = self.pc_slope * s
        if self.pc_tanh_amp:
            out = out + self.pc_tanh_amp * np.tanh(self.pc_tanh_rate * s)
        return out

    def dpc(self, s):
        s = np.asarray(s, dtype=float)
        out = np.full_like(s, self.pc_slope)
        if self.pc_tanh_amp:
            out = out + self.pc_tanh_amp * self.pc_tanh_rate / np.cosh(self.pc_tanh_rate * s) ** 2
        return out

    def pc_inverse(self, q):
        """Solve ``p_c(s) = q`` for ``s``."""
        q = np.asarray(q, dtype=float)
        if not self.pc_tanh_amp:
            return q / self.pc_slope
        # bracket: |b tanh| <= b, so s lies in [(q-b)/a, (q+b)/a]
        a, b = self.pc_slope, self.pc_tanh_amp
        lo, hi = (q - b) / a, (q + b) / a
        s = q / (a + b * self.pc_tanh_rate)
        for _ in range(100):
            f = self.pc(s) - q
            lo = np.where(f < 0, s, lo)
            hi = np.where(f > 0, s, hi)
            step = s - f / self.dpc(s)
            bad = (step <= lo) | (step >= hi)
            s_new = np.where(bad, 0.5 * (lo + hi), step)
            if np.all(np.abs(s_new - s) <= 1e-15 * np.maximum(1.0, np.abs(s))):
                s = s_new
                break
            s = s_new
        return s

    def coupling_G(self, p_g, p_w):
        """Saturations ``(s_g, s_w)`` from phase pressures."""
        s_g = self.pc_inverse(np.asarray(p_g, dtype=float) - np.asarray(p_w, dtype=float))
        return s_g, 1.0 - s_g

    # ------------------------------------------------------------------
    # mobilities
    def _mu(self, phase):
        return self.mu_g if Phase(phase) is Phase.GAS else self.mu_w

    def mobility(self, phase, s):
        """Degenerate Corey mobility, extended constantly outside [0, 1]."""
        return clamp_Z(np.asarray(s, dtype=float)) ** self.mobility_exponent / self._mu(phase)

    def mobility_eps(self, phase, s, eps=0.0):
        if eps < 0:
            raise InvalidParams("eps must be non-negative")
        return eps + self.mobility(phase, s)

    def total_mobility(self, s_g):
        s_g = np.asarray(s_g, dtype=float)
        return self.mobility(Phase.WETTING, 1.0 - s_g) + self.mobility(Phase.GAS, s_g)

    def total_mobility_floor(self) -> float:
        """m_0 = min over [0, 1] of the total mobility."""
        s = np.linspace(0.0, 1.0, 10001)
        m = self.total_mobility(s)
        i = int(np.argmin(m))
        lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
        best = float(m[i])
        if hi > lo:
            res = minimize_scalar(lambda x: float(self.total_mobility(x)), bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-12})
            best = min(best, float(res.fun))
        if not best > 0:
            raise DegenerateModel(f"total mobility floor m_0 = {best} is not positive")
        return best

    # ------------------------------------------------------------------
    # densities
    def _k(self, phase):
        return self.rho_steepness_g if Phase(phase) is Phase.GAS else self.rho_steepness_w

    def rho(self, phase, p):
        p = np.asarray(p, dtype=float)
        k = self._k(phase)
        return self.rho0 + (self.rho1 - self.rho0) * 0.5 * (1.0 + np.tanh(k * p))

    def drho(self, phase, p):
        p = np.asarray(p, dtype=float)
        k = self._k(phase)
        return (self.rho1 - self.rho0) * 0.5 * k / np.cosh(k * p) ** 2

    def _mean_inverse_density(self, phase, a, b):
        """Mean of 1/rho over [a, b] (a != b), Gauss-Legendre, vectorised."""
        if self.rho0 == self.rho1 or self._k(phase) == 0:
            return np.full(np.shape(a), 1.0 / float(self.rho(phase, 0.0)))
        nodes, weights = self._tables["gl"]
        width = b - a
        panels = max(1, int(np.ceil(np.max(np.abs(width), initial=0.0))))
        edges = a[..., None] + width[..., None] * (np.arange(panels + 1) / panels)
        left, right = edges[..., :-1], edges[..., 1:]
        mid, half = 0.5 * (left + right), 0.5 * (right - left)
        z = mid[..., None] + half[..., None] * nodes
        vals = (1.0 / self.rho(phase, z)) @ weights
        return 0.5 * np.sum(vals, axis=-1) / panels

    def interface_density(self, phase, p_a, p_b):
        """Harmonic-integral density between two pressures.

        ``1/rho_AB`` is the mean of ``1/rho`` over ``[p_a, p_b]``, or
        ``rho(p_a)`` when the two pressures (nearly) coincide.
        """
        p_a, p_b = np.broadcast_arrays(np.asarray(p_a, dtype=float), np.asarray(p_b, dtype=float))
        lo, hi = np.minimum(p_a, p_b), np.maximum(p_a, p_b)
        scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
        close = (hi - lo) < 1e-12 * scale
        out = np.empty(lo.shape)
        out[close] = self.rho(phase, 0.5 * (lo[close] + hi[close]))
        far = ~close
        if np.any(far):
            out[far] = 1.0 / self._mean_inverse_density(phase, lo[far], hi[far])
        return out

    def g(self, phase, p):
        """``g(p) = int_0^p 1/rho``."""
        p = np.asarray(p, dtype=float)
        zero = np.zeros_like(p)
        out = np.zeros_like(p)
        nz = p != 0
        if np.any(nz):
            out[nz] = p[nz] * self._mean_inverse_density(phase, zero[nz], p[nz])
        return out

    def H(self, phase, p):
        """``H(p) = rho(p) g(p) - p``."""
        p = np.asarray(p, dtype=float)
        return self.rho(phase, p) * self.g(phase, p) - p

    # ------------------------------------------------------------------
    # global-pressure split and capillary energy function
    def _integrands(self, u):
        mg = self.mobility(Phase.GAS, u)
        mw = self.mobility(Phase.WETTING, 1.0 - u)
        mt = mg + mw
        dpc = self.dpc(u)
        return mw / mt * dpc, mg / mt * dpc, np.sqrt(mw * mg) / mt * dpc

    def _build_tables(self):
        nodes, weights = self._tables["gl"]
        knots = np.linspace(0.0, 1.0, N_TABLE_INTERVALS + 1)
        left, right = knots[:-1], knots[1:]
        mid, half = 0.5 * (left + right), 0.5 * (right - left)
        z = mid[:, None] + half[:, None] * nodes
        at_nodes = self._integrands(z)
        at_knots = self._integrands(knots)
        splines = {}
        for name, fz, fk in zip(("p_hat_g", "p_hat_w", "xi"), at_nodes, at_knots):
            increments = half * (fz @ weights)
            values = np.concatenate(([0.0], np.cumsum(increments)))
            splines[name] = CubicHermiteSpline(knots, values, fk)
        outside = {}
        probes = np.array([-1.0, 2.0])
        for name, vals in zip(("p_hat_g", "p_hat_w", "xi"), self._integrands(probes)):
            outside[name] = tuple(vals / self.dpc(probes))
        return {"splines": splines, "outside": outside,
                "end": {k: float(v(1.0)) for k, v in splines.items()}}

    def _on_unit(self, name, s):
        return self._tables["splines"][name](np.clip(s, 0.0, 1.0))

    def _extension(self, name, s):
        """Outside [0, 1] the integrand is a constant multiple of p_c'."""
        factor_lo, factor_hi = self._tables["outside"][name]
        lo = factor_lo * self.pc(np.minimum(s, 0.0))
        hi = self._tables["end"][name] + factor_hi * (self.pc(np.maximum(s, 1.0)) - self.pc(1.0))
        return np.where(s < 0, lo, np.where(s > 1, hi, self._on_unit(name, s)))

    def global_pressure_split(self, s_g):
        """Corrective pressures ``(p_hat_g, p_hat_w)`` at gas saturation ``s_g``."""
        s = np.asarray(s_g, dtype=float)
        return self._extension("p_hat_g", s), self._extension("p_hat_w", s)

    def xi(self, s_g):
        """Capillary energy function ``int_0^s sqrt(M_w M_g)/M p_c'``."""
        return self._extension("xi", np.asarray(s_g, dtype=float))

    def global_pressure(self, p_g, s_g):
        """``p = p_g - p_hat_g(s_g)``."""
        return np.asarray(p_g, dtype=float) - self.global_pressure_split(s_g)[0]
