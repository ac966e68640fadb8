"""Finite-difference Jacobians with column colouring."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["greedy_coloring", "fd_jacobian"]


def greedy_coloring(pattern):
    """Colour columns so that no two columns of a colour share a row."""
    P = sp.csc_matrix(pattern, dtype=bool)
    conflict = (P.T @ P).tocsr()
    n = P.shape[1]
    colors = np.full(n, -1)
    for j in range(n):
        nbrs = conflict.indices[conflict.indptr[j]:conflict.indptr[j + 1]]
        used = set(colors[nbrs][colors[nbrs] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        colors[j] = c
    return colors


def fd_jacobian(fun, x, pattern, colors, f0=None, rel_step=1e-7):
    """Forward-difference Jacobian of ``fun`` at ``x`` on a known pattern.

    The step for column ``j`` is ``rel_step * max(1, |x_j|)``; all columns
    of a colour are perturbed together.
    """
    x = np.asarray(x, dtype=float)
    P = sp.csc_matrix(pattern, dtype=bool)
    if f0 is None:
        f0 = fun(x)
    h = rel_step * np.maximum(1.0, np.abs(x))
    h = (x + h) - x
    rows_all, cols_all, vals_all = [], [], []
    for c in range(int(colors.max()) + 1):
        cols = np.flatnonzero(colors == c)
        xp = x.copy()
        xp[cols] += h[cols]
        df = fun(xp) - f0
        counts = np.diff(P.indptr)[cols]
        rows = np.concatenate([P.indices[P.indptr[j]:P.indptr[j + 1]] for j in cols])
        cc = np.repeat(cols, counts)
        rows_all.append(rows)
        cols_all.append(cc)
        vals_all.append(df[rows] / h[cc])
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    return sp.csc_matrix((vals, (rows, cols)), shape=(len(f0), len(x)))
