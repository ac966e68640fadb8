"""Primal, dual and diamond meshes for discrete duality finite volumes.

Node numbering used throughout the DDFV code:

* ``0 .. nc-1``            interior primal cells,
* ``nc .. nc+nb-1``        boundary edges (degenerate primal cells),
* ``nc+nb .. nc+nb+nv-1``  vertices (dual cells).

Every diamond is stored as the four node indices ``K, L, Ks, Ls``. ``L``
is a boundary-edge node for boundary diamonds. Normals are oriented
``K -> L`` and ``Ks -> Ls``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discrete import boundary_sides, cross2, edge_incidence, tensor_field
from .errors import InvalidMesh

__all__ = ["Diamonds", "DdfvMesh", "build_structured", "build_from_polygons",
           "transmissibilities", "discrete_gradient", "norms", "structured_vertices"]


def transmissibilities(m_sigma, m_sigma_star, n_kl, n_kstar_lstar, sin_alpha, Lambda):
    """Diamond transmissibilities ``(tau_KL, tau_KsLs, eta_D)``.

    Vectorised: normals have shape ``(..., 2)`` and ``Lambda`` ``(..., 2, 2)``.
    """
    sin_alpha = np.asarray(sin_alpha, dtype=float)
    if np.any(sin_alpha <= 1e-10):
        raise InvalidMesh("degenerate diamond angle (sin alpha <= 1e-10)")
    n = np.asarray(n_kl, dtype=float)
    ns = np.asarray(n_kstar_lstar, dtype=float)
    Ln = np.einsum("...ij,...j->...i", Lambda, n)
    Lns = np.einsum("...ij,...j->...i", Lambda, ns)
    tau = np.asarray(m_sigma) / np.asarray(m_sigma_star) * np.sum(Ln * n, axis=-1) / sin_alpha
    tau_star = np.asarray(m_sigma_star) / np.asarray(m_sigma) * np.sum(Lns * ns, axis=-1) / sin_alpha
    eta = np.sum(Ln * ns, axis=-1) / sin_alpha
    return tau, tau_star, eta


@dataclass(frozen=True)
class Diamonds:
    """Struct-of-arrays for the diamond mesh (one entry per primal edge)."""

    K: np.ndarray
    L: np.ndarray
    Ks: np.ndarray
    Ls: np.ndarray
    boundary: np.ndarray
    m_sigma: np.ndarray
    m_sigma_star: np.ndarray
    sin_alpha: np.ndarray
    m_D: np.ndarray
    n_sigma_K: np.ndarray
    n_sigma_star_Kstar: np.ndarray
    Lambda: np.ndarray
    tau: np.ndarray
    tau_star: np.ndarray
    eta: np.ndarray

    def __len__(self):
        return len(self.K)


@dataclass(frozen=True, eq=False)
class DdfvMesh:
    vertices: np.ndarray
    cells: tuple
    n_cells: int
    n_bedges: int
    n_vertices: int
    node_xy: np.ndarray
    node_measure: np.ndarray
    node_dirichlet: np.ndarray
    node_kind: np.ndarray          # 0 primal, 1 boundary edge, 2 vertex
    bedge_vertices: np.ndarray
    cell_Lambda: np.ndarray
    diamonds: Diamonds
    dual_overlap: sp.csr_matrix    # (n_vertices, n_cells): |K* intersect K|
    mixed_corners: np.ndarray

    @property
    def n_nodes(self):
        return len(self.node_xy)

    @property
    def dof_nodes(self):
        return np.flatnonzero(~self.node_dirichlet)

    @property
    def dof_count(self):
        return int(np.count_nonzero(~self.node_dirichlet))

    @property
    def dof_index(self):
        idx = np.full(self.n_nodes, -1)
        idx[self.dof_nodes] = np.arange(self.dof_count)
        return idx

    @property
    def primal_slice(self):
        return slice(0, self.n_cells)

    @property
    def vertex_slice(self):
        start = self.n_cells + self.n_bedges
        return slice(start, start + self.n_vertices)

    def expand(self, u_dof):
        """Full node vector from unknowns; Dirichlet nodes are zero."""
        u = np.zeros(self.n_nodes)
        u[self.dof_nodes] = u_dof
        return u

    def restrict(self, u_full):
        return np.asarray(u_full)[self.dof_nodes]

    def sample(self, fun):
        """Evaluate ``fun(x, y)`` at every node centre."""
        return np.asarray(fun(self.node_xy[:, 0], self.node_xy[:, 1]), dtype=float)

    def node_average(self, cell_values):
        """Area-weighted mean of a per-primal-cell field on every node.

        Primal cells keep their value, dual cells use the overlap weights,
        boundary edges take the value of their adjacent cell.
        """
        cell_values = np.asarray(cell_values, dtype=float)
        out = np.empty(self.n_nodes)
        out[: self.n_cells] = cell_values
        d = self.diamonds
        out[d.L[d.boundary]] = cell_values[d.K[d.boundary]]
        out[self.vertex_slice] = (self.dual_overlap @ cell_values) / self.node_measure[self.vertex_slice]
        return out

    def tau_matrix(self, dof_only=True):
        """Matrix of the quadratic form ``||u||_{T,tau}^2``."""
        d = self.diamonds
        B1 = edge_incidence(d.K, d.L, self.n_nodes)
        B2 = edge_incidence(d.Ks, d.Ls, self.n_nodes)
        A = B1.T @ sp.diags(d.tau) @ B1 + B2.T @ sp.diags(d.tau_star) @ B2
        if dof_only:
            idx = self.dof_nodes
            A = A[idx][:, idx]
        return sp.csr_matrix(A)

    def node_adjacency(self):
        """Boolean node graph: nodes sharing a diamond (plus the diagonal)."""
        d = self.diamonds
        quad = np.column_stack([d.K, d.L, d.Ks, d.Ls])
        rows = np.repeat(quad, 4, axis=1).ravel()
        cols = np.tile(quad, (1, 4)).ravel()
        A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        return (A + sp.identity(self.n_nodes, format="csr")).astype(bool)

    def stats(self):
        d = self.diamonds
        alpha = np.degrees(np.arcsin(np.clip(d.sin_alpha, 0, 1)))
        return {
            "primal_cells": self.n_cells,
            "boundary_edges": self.n_bedges,
            "dual_cells": self.n_vertices,
            "diamonds": len(d),
            "dofs_per_phase": self.dof_count,
            "dirichlet_nodes": int(np.count_nonzero(self.node_dirichlet)),
            "mixed_dirichlet_neumann_corners": int(len(self.mixed_corners)),
            "sin_alpha_min": float(d.sin_alpha.min()),
            "alpha_min_deg": float(alpha.min()),
            "tau_min": float(min(d.tau.min(), d.tau_star.min())),
            "tau_max": float(max(d.tau.max(), d.tau_star.max())),
            "eta_abs_max": float(np.abs(d.eta).max()),
            "area_primal": float(self.node_measure[: self.n_cells].sum()),
            "area_dual": float(self.node_measure[self.vertex_slice].sum()),
            "area_diamonds": float(d.m_D.sum()),
        }


def _centroids(vertices, cells):
    out = np.empty((len(cells), 2))
    areas = np.empty(len(cells))
    for i, c in enumerate(cells):
        p = vertices[c]
        q = np.roll(p, -1, axis=0)
        cr = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
        a = 0.5 * cr.sum()
        areas[i] = a
        out[i] = ((p + q) * cr[:, None]).sum(axis=0) / (6.0 * a) if a != 0 else p.mean(axis=0)
    return out, areas


def build_from_polygons(vertices, cells, dirichlet, permeability=None):
    """Build the DDFV mesh from a polygon soup.

    Parameters
    ----------
    vertices : (nv, 2) array
    cells : sequence of vertex-index lists, counter-clockwise
    dirichlet : callable or (nb,) bool array keyed by boundary edge order,
        or mapping ``{(a, b): bool}`` over boundary edges
    permeability : None, (2, 2), (nc, 2, 2) array or callable ``(x, y)``
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = tuple(np.asarray(c, dtype=int) for c in cells)
    nv, nc = len(vertices), len(cells)
    centers, areas = _centroids(vertices, cells)
    if np.any(areas <= 0):
        raise InvalidMesh("non-positive primal cell area (cells must be counter-clockwise)")

    edge_cells = {}
    for k, c in enumerate(cells):
        for a, b in zip(c, np.roll(c, -1)):
            edge_cells.setdefault((min(a, b), max(a, b)), []).append((k, a, b))
    interior, bedges = [], []
    for key, owners in edge_cells.items():
        if len(owners) == 2:
            interior.append((owners[0][0], owners[1][0], owners[0][1], owners[0][2]))
        elif len(owners) == 1:
            bedges.append((owners[0][0], owners[0][1], owners[0][2]))
        else:
            raise InvalidMesh(f"edge {key} shared by {len(owners)} cells (non-conforming)")
    nb = len(bedges)
    bedge_vertices = np.array([(a, b) for _, a, b in bedges], dtype=int).reshape(nb, 2)
    bmid = 0.5 * (vertices[bedge_vertices[:, 0]] + vertices[bedge_vertices[:, 1]])

    if callable(dirichlet):
        bdir = np.asarray(dirichlet(bmid), dtype=bool)
    elif isinstance(dirichlet, dict):
        bdir = np.array([bool(dirichlet.get((min(a, b), max(a, b)), False)) for a, b in bedge_vertices])
    else:
        bdir = np.asarray(dirichlet, dtype=bool)
    if bdir.shape != (nb,):
        raise InvalidMesh("Dirichlet selector does not match the boundary edges")

    voff = nc + nb
    vdir = np.zeros(nv, dtype=bool)
    vneu = np.zeros(nv, dtype=bool)
    for (a, b), isdir in zip(bedge_vertices, bdir):
        if isdir:
            vdir[[a, b]] = True
        else:
            vneu[[a, b]] = True
    mixed = np.flatnonzero(vdir & vneu)

    node_xy = np.vstack([centers, bmid, vertices])
    node_kind = np.concatenate([np.zeros(nc, int), np.ones(nb, int), np.full(nv, 2)])
    node_dirichlet = np.concatenate([np.zeros(nc, bool), bdir, vdir])

    K = np.array([e[0] for e in interior] + [e[0] for e in bedges], dtype=int)
    L = np.array([e[1] for e in interior] + list(nc + np.arange(nb)), dtype=int)
    Ks = voff + np.array([e[2] for e in interior] + [e[1] for e in bedges], dtype=int)
    Ls = voff + np.array([e[3] for e in interior] + [e[2] for e in bedges], dtype=int)
    boundary = np.concatenate([np.zeros(len(interior), bool), np.ones(nb, bool)])

    xK, xL, xKs, xLs = node_xy[K], node_xy[L], node_xy[Ks], node_xy[Ls]
    e, f = xL - xK, xLs - xKs
    m_sigma_star = np.linalg.norm(e, axis=1)
    m_sigma = np.linalg.norm(f, axis=1)
    ef = cross2(e, f)
    sin_alpha = np.abs(ef) / (m_sigma * m_sigma_star)
    if np.any(sin_alpha <= 1e-10):
        raise InvalidMesh("degenerate diamond (sin alpha <= 1e-10)")
    m_D = 0.5 * m_sigma * m_sigma_star * sin_alpha

    rot = np.column_stack([-f[:, 1], f[:, 0]]) / m_sigma[:, None]
    n_sigma = rot * np.sign(np.sum(rot * e, axis=1))[:, None]
    rot_s = np.column_stack([-e[:, 1], e[:, 0]]) / m_sigma_star[:, None]
    n_sigma_star = rot_s * np.sign(np.sum(rot_s * f, axis=1))[:, None]

    # diamond split by the primal edge: part in K and part in L
    part_K = 0.5 * np.abs(cross2(xKs - xK, xLs - xK))
    part_L = np.where(boundary, 0.0, 0.5 * np.abs(cross2(xKs - xL, xLs - xL)))
    if not np.allclose(part_K + part_L, m_D, rtol=1e-10, atol=1e-14):
        raise InvalidMesh("non-convex diamond: cell centres on the same side of an edge")
    measures_K = np.bincount(K, weights=part_K, minlength=nc)
    measures_K += np.bincount(L[~boundary], weights=part_L[~boundary], minlength=nc)[:nc]
    if not np.allclose(measures_K, areas, rtol=1e-10, atol=1e-14):
        raise InvalidMesh("cell centre outside the kernel of its cell")

    cell_Lambda = tensor_field(permeability, centers)
    Lam_L = cell_Lambda[np.where(boundary, K, np.minimum(L, nc - 1))]
    Lambda_D = (part_K[:, None, None] * cell_Lambda[K] + part_L[:, None, None] * Lam_L) / m_D[:, None, None]
    tau, tau_star, eta = transmissibilities(m_sigma, m_sigma_star, n_sigma, n_sigma_star, sin_alpha, Lambda_D)

    # dual pieces: triangles (K, L, Ks) and (K, L, Ls), each cut by the primal edge
    tri_s = 0.5 * np.abs(cross2(e, xKs - xK))
    tri_t = 0.5 * np.abs(cross2(e, xLs - xK))
    t = np.where(boundary, 1.0, cross2(xKs - xK, f) / ef)
    if np.any((t < -1e-12) | (t > 1 + 1e-12)):
        raise InvalidMesh("dual edge does not cross its primal edge")
    v_s, v_t = Ks - voff, Ls - voff
    rows = np.concatenate([v_s, v_s, v_t, v_t])
    cols = np.concatenate([K, np.where(boundary, K, L), K, np.where(boundary, K, L)])
    vals = np.concatenate([t * tri_s, (1 - t) * tri_s, t * tri_t, (1 - t) * tri_t])
    overlap = sp.csr_matrix((vals, (rows, np.minimum(cols, nc - 1))), shape=(nv, nc))
    dual_measure = np.bincount(v_s, weights=tri_s, minlength=nv) + np.bincount(v_t, weights=tri_t, minlength=nv)

    node_measure = np.concatenate([areas, np.zeros(nb), dual_measure])
    diamonds = Diamonds(K=K, L=L, Ks=Ks, Ls=Ls, boundary=boundary, m_sigma=m_sigma,
                        m_sigma_star=m_sigma_star, sin_alpha=sin_alpha, m_D=m_D,
                        n_sigma_K=n_sigma, n_sigma_star_Kstar=n_sigma_star, Lambda=Lambda_D,
                        tau=tau, tau_star=tau_star, eta=eta)
    if np.any(tau <= 0) or np.any(tau_star <= 0):
        raise InvalidMesh("non-positive transmissibility")
    return DdfvMesh(vertices=vertices, cells=cells, n_cells=nc, n_bedges=nb, n_vertices=nv,
                    node_xy=node_xy, node_measure=node_measure, node_dirichlet=node_dirichlet,
                    node_kind=node_kind, bedge_vertices=bedge_vertices, cell_Lambda=cell_Lambda,
                    diamonds=diamonds, dual_overlap=overlap, mixed_corners=mixed + voff)


def structured_vertices(nx, ny, distortion=0.0, seed=0):
    """Vertices of an ``nx`` x ``ny`` grid on the unit square.

    Interior vertices are moved by up to ``distortion * h`` in each
    coordinate, with a seeded generator so meshes are reproducible.
    """
    if nx < 2 or ny < 2:
        raise InvalidMesh("need nx, ny >= 2")
    if not 0 <= distortion < 0.5:
        raise InvalidMesh("distortion must lie in [0, 0.5)")
    X, Y = np.meshgrid(np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1))
    xy = np.column_stack([X.ravel(), Y.ravel()])
    if distortion > 0:
        h = min(1.0 / nx, 1.0 / ny)
        rng = np.random.default_rng(seed)
        shift = rng.uniform(-1.0, 1.0, xy.shape) * distortion * h
        i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
        inner = ((i > 0) & (i < nx) & (j > 0) & (j < ny)).ravel()
        xy[inner] += shift[inner]
    return xy


def build_structured(nx, ny, distortion=0.0, dirichlet=None, permeability=None, seed=0):
    """Quadrilateral DDFV mesh of the unit square.

    ``dirichlet`` defaults to all four sides.
    """
    xy = structured_vertices(nx, ny, distortion, seed)

    def vid(i, j):
        return j * (nx + 1) + i

    cells = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
             for j in range(ny) for i in range(nx)]
    if dirichlet is None:
        dirichlet = boundary_sides("all")
    return build_from_polygons(xy, cells, dirichlet, permeability)


def discrete_gradient(mesh, u):
    """Per-diamond DDFV gradient of a full node vector ``u``."""
    d = mesh.diamonds
    u = np.asarray(u, dtype=float)
    dKL = u[d.L] - u[d.K]
    dKsLs = u[d.Ls] - u[d.Ks]
    return ((dKL / d.m_sigma_star)[:, None] * d.n_sigma_K
            + (dKsLs / d.m_sigma)[:, None] * d.n_sigma_star_Kstar) / d.sin_alpha[:, None]


def norms(mesh, u):
    """``(|u|_{1,T}, ||u||_{T,tau}, ||u||_{T,D})`` of a full node vector."""
    d = mesh.diamonds
    u = np.asarray(u, dtype=float)
    w = mesh.node_measure
    prim = mesh.primal_slice
    dual = mesh.vertex_slice
    l1 = 0.5 * np.sum(w[prim] * np.abs(u[prim])) + 0.5 * np.sum(w[dual] * np.abs(u[dual]))
    tau2 = np.sum(d.tau * (u[d.L] - u[d.K]) ** 2 + d.tau_star * (u[d.Ls] - u[d.Ks]) ** 2)
    grad = discrete_gradient(mesh, u)
    grad2 = np.sum(d.m_D * np.sum(grad ** 2, axis=1))
    return float(l1), float(np.sqrt(tau2)), float(np.sqrt(grad2))


def l1_weights(mesh):
    """Weights of ``|u|_{1,T}`` restricted to the unknowns."""
    w = mesh.node_measure.copy()
    w[mesh.primal_slice] *= 0.5
    w[mesh.vertex_slice] *= 0.5
    return w[mesh.dof_nodes]
