"""Initial saturation profiles turned into admissible pressure states.

Every profile returns a gas saturation ``s0(x, y)`` with values strictly
inside ``(0, 1)``; the state is then ``p_w = p_w_level``,
``p_g = p_w + p_c(s0)``, so the coupling relation reproduces ``s0``.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidParams
from .state import State

__all__ = ["PROFILES", "saturation_profile", "state_from_saturation", "initial_state"]


def _zero(x, y):
    return np.zeros_like(x)


def _bump(x, y, s_background=0.05, amplitude=0.6, center_x=0.6, center_y=0.5, width=0.05):
    return s_background + amplitude * np.exp(-((x - center_x) ** 2 + (y - center_y) ** 2) / width)


def _drainage(x, y, s_background=0.05, s_high=0.7, front=0.6, width=0.05):
    """Gas-rich zone on the right, smoothed with a ``tanh`` front."""
    return s_background + (s_high - s_background) * 0.5 * (1.0 + np.tanh((x - front) / width))


PROFILES = {"zero": _zero, "bump": _bump, "drainage": _drainage}


def saturation_profile(name, xy, **params):
    try:
        fun = PROFILES[name]
    except KeyError:
        raise InvalidParams(f"unknown initial profile {name!r}; choose from {sorted(PROFILES)}") from None
    xy = np.asarray(xy, dtype=float)
    return np.asarray(fun(xy[:, 0], xy[:, 1], **params), dtype=float)


def state_from_saturation(fluid, s_g, p_w_level=0.0):
    s_g = np.asarray(s_g, dtype=float)
    if s_g.size and (s_g.min() < 0 or s_g.max() > 1):
        raise InvalidParams("initial saturation outside [0, 1]")
    p_w = np.full(s_g.shape, float(p_w_level))
    return State(p_w + fluid.pc(s_g), p_w, fluid)


def initial_state(backend, name="bump", p_w_level=0.0, **params):
    """Sample a named profile on the backend's unknowns."""
    if name == "zero":
        return backend.zero_state()
    s0 = saturation_profile(name, backend.dof_coordinates(), **params)
    return state_from_saturation(backend.fluid, s0, p_w_level)
