"""Discrete state and the common scheme-backend machinery."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fluid import FluidModel
from .jacobian import fd_jacobian, greedy_coloring

__all__ = ["State", "SchemeBackend"]


@dataclass(frozen=True, eq=False)
class State:
    """Gas and wetting pressures on the unknowns of one time level."""

    p_g: np.ndarray
    p_w: np.ndarray
    fluid: FluidModel

    def __post_init__(self):
        p_g = np.asarray(self.p_g, dtype=float)
        p_w = np.asarray(self.p_w, dtype=float)
        if p_g.shape != p_w.shape or p_g.ndim != 1:
            raise ValueError("p_g and p_w must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(p_g)) and np.all(np.isfinite(p_w))):
            raise ValueError("non-finite pressure")
        object.__setattr__(self, "p_g", p_g)
        object.__setattr__(self, "p_w", p_w)

    @classmethod
    def from_vector(cls, x, fluid):
        x = np.asarray(x, dtype=float)
        n = len(x) // 2
        return cls(x[:n].copy(), x[n:].copy(), fluid)

    @classmethod
    def zeros(cls, n, fluid):
        return cls(np.zeros(n), np.zeros(n), fluid)

    @property
    def vector(self):
        return np.concatenate([self.p_g, self.p_w])

    @cached_property
    def saturations(self):
        return self.fluid.coupling_G(self.p_g, self.p_w)

    @property
    def s_g(self):
        return self.saturations[0]

    @property
    def s_w(self):
        return self.saturations[1]

    def __len__(self):
        return len(self.p_g)


class SchemeBackend:
    """Shared plumbing for the DDFV and CVFE residuals.

    Subclasses provide ``dof_count``, ``node_adjacency_dofs()`` (boolean
    sparse graph of the unknowns), ``residual``, ``row_scale`` and the
    norm hooks used by the continuation monitors.
    """

    fluid: FluidModel
    dt: float

    def residual(self, state, prev, eps=0.0, eta=0.0):  # pragma: no cover - abstract
        raise NotImplementedError

    def residual_vector(self, x, prev, eps=0.0, eta=0.0):
        return self.residual(State.from_vector(x, self.fluid), prev, eps, eta)

    @cached_property
    def jacobian_pattern(self):
        A = sp.csr_matrix(self.node_adjacency_dofs(), dtype=bool)
        return sp.csc_matrix(sp.kron(np.ones((2, 2), dtype=bool), A, format="csr"), dtype=bool)

    @cached_property
    def jacobian_colors(self):
        return greedy_coloring(self.jacobian_pattern)

    def jacobian(self, state, prev, eps=0.0, eta=0.0, f0=None):
        """Finite-difference Jacobian with respect to ``(p_g, p_w)``."""
        return fd_jacobian(lambda x: self.residual_vector(x, prev, eps, eta), state.vector,
                           self.jacobian_pattern, self.jacobian_colors, f0=f0)

    def zero_state(self):
        return State.zeros(self.dof_count, self.fluid)

    def saturation_view(self, state):
        return state.s_g, state.s_w

    def zeta_norms(self, state):
        """``(||p||, ||xi||)`` of global pressure and capillary energy function."""
        s_g = state.s_g
        p = self.fluid.global_pressure(state.p_g, s_g)
        return self.gradient_norm(p), self.gradient_norm(self.fluid.xi(s_g))

    def norm_of_difference(self, state):
        return self.gradient_norm(state.p_g - state.p_w)

    def phase_norms(self, state):
        return self.gradient_norm(state.p_g), self.gradient_norm(state.p_w)

    def gradient_norm(self, u_dof):
        u = np.asarray(u_dof, dtype=float)
        return float(np.sqrt(max(u @ (self.norm_matrix @ u), 0.0)))
