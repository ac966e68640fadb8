"""Small helpers shared by the DDFV and CVFE discretisations."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidMesh

__all__ = ["boundary_sides", "shoelace", "edge_incidence", "l1_norm_constant", "tensor_field"]

_SIDE_TESTS = {
    "left": lambda x, y, tol: np.abs(x) < tol,
    "right": lambda x, y, tol: np.abs(x - 1.0) < tol,
    "bottom": lambda x, y, tol: np.abs(y) < tol,
    "top": lambda x, y, tol: np.abs(y - 1.0) < tol,
}


def boundary_sides(*names, tol=1e-9):
    """Dirichlet selector for named sides of the unit square.

    Returns a callable mapping an ``(m, 2)`` array of boundary points to a
    boolean mask. ``"all"`` selects every side.
    """
    if "all" in names:
        names = tuple(_SIDE_TESTS)
    unknown = set(names) - set(_SIDE_TESTS)
    if unknown:
        raise ValueError(f"unknown boundary side(s): {sorted(unknown)}")

    def predicate(points):
        points = np.atleast_2d(points)
        x, y = points[:, 0], points[:, 1]
        mask = np.zeros(len(points), dtype=bool)
        for name in names:
            mask |= _SIDE_TESTS[name](x, y, tol)
        return mask

    predicate.sides = tuple(names)
    return predicate


def shoelace(poly):
    """Signed area of polygon(s); ``poly`` has shape ``(..., k, 2)``."""
    poly = np.asarray(poly, dtype=float)
    x, y = poly[..., 0], poly[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1)


def cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def edge_incidence(tail, head, n):
    """Sparse ``(m, n)`` matrix with rows ``e_head - e_tail``."""
    m = len(tail)
    rows = np.repeat(np.arange(m), 2)
    cols = np.column_stack([tail, head]).ravel()
    vals = np.tile([-1.0, 1.0], m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))


def l1_norm_constant(weights, quad_form, n_fields=1000, seed=0, sweeps=20):
    """Estimate ``C = sup |u|_1 / sqrt(u^T A u)`` with ``|u|_1 = sum w|u|``.

    Each random start is pushed uphill by the sign fixed point
    ``u <- A^{-1}(w * sign(u))``, which never decreases the ratio; the
    largest ratio found is returned.
    """
    A = sp.csc_matrix(quad_form)
    w = np.asarray(weights, dtype=float)
    solve = spla.factorized(A)
    rng = np.random.default_rng(seed)

    def ratio(u):
        q = float(u @ (A @ u))
        return float(np.sum(w * np.abs(u))) / np.sqrt(q) if q > 0 else 0.0

    best = 0.0
    starts = rng.standard_normal((n_fields, len(w)))
    starts[0] = 1.0
    for u in starts:
        r = ratio(u)
        for _ in range(sweeps):
            v = solve(w * np.where(u >= 0, 1.0, -1.0))
            rv = ratio(v)
            if rv <= r * (1 + 1e-14):
                r = max(r, rv)
                break
            u, r = v, rv
        best = max(best, r)
    return best


def tensor_field(permeability, centers):
    """Validated ``(n, 2, 2)`` SPD tensors from a constant, array or ``(x, y)`` callable."""
    n = len(centers)
    if permeability is None:
        return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    if callable(permeability):
        lam = np.asarray(permeability(centers[:, 0], centers[:, 1]), dtype=float)
    else:
        lam = np.asarray(permeability, dtype=float)
    lam = np.broadcast_to(lam, (n, 2, 2)).copy()
    if not np.allclose(lam, np.swapaxes(lam, 1, 2)):
        raise InvalidMesh("permeability tensor must be symmetric")
    if np.any(np.linalg.eigvalsh(lam)[:, 0] <= 0):
        raise InvalidMesh("permeability tensor must be positive definite")
    return lam
