"""Vertex-centred control-volume finite elements on triangles.

Unknowns are the non-Dirichlet vertices. Each triangle ``T`` carries the
P1 stiffness coefficients ``Lambda_KL^T = -|T| Lambda_T grad phi_K . grad phi_L``
for its three vertex pairs, stored in the order ``(0, 1), (1, 2), (2, 0)``.
The control volume of a vertex collects, from every incident triangle, the
quadrilateral spanned by the vertex, the two adjacent edge midpoints and
the barycentre.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .ddfv_mesh import structured_vertices
from .discrete import boundary_sides, cross2, shoelace, tensor_field
from .errors import InvalidMesh, InvalidParams
from .fluid import FluidModel, Phase, clamp_Z
from .state import SchemeBackend, State

__all__ = ["CvfeMesh", "CvfeScheme", "build_triangulation", "build_from_triangles",
           "stiffness_coeffs", "upwind_saturation_cvfe", "dual_polygons", "PAIRS"]

PAIRS = np.array([[0, 1], [1, 2], [2, 0]])


def p1_gradients(tri_xy):
    """Constant gradients of the three P1 basis functions, shape ``(..., 3, 2)``."""
    tri_xy = np.asarray(tri_xy, dtype=float)
    p0, p1, p2 = tri_xy[..., 0, :], tri_xy[..., 1, :], tri_xy[..., 2, :]
    two_area = cross2(p1 - p0, p2 - p0)
    grads = np.empty(tri_xy.shape)
    # grad phi_i = rot(opposite edge) / (2|T|), rot(v) = (-v_y, v_x)
    for i, (a, b) in enumerate(((p1, p2), (p2, p0), (p0, p1))):
        e = b - a
        grads[..., i, 0] = -e[..., 1]
        grads[..., i, 1] = e[..., 0]
    return grads / two_area[..., None, None], 0.5 * two_area


def stiffness_coeffs(tri_xy, Lambda=None):
    """``Lambda_KL^T`` for the pairs ``(0,1), (1,2), (2,0)`` of one or many triangles."""
    grads, area = p1_gradients(tri_xy)
    if Lambda is None:
        Lambda = np.eye(2)
    Lambda = np.broadcast_to(np.asarray(Lambda, dtype=float), grads.shape[:-2] + (2, 2))
    lg = np.einsum("...ij,...kj->...ki", Lambda, grads)
    return np.stack([-area * np.sum(lg[..., a, :] * grads[..., b, :], axis=-1) for a, b in PAIRS], axis=-1)


def dual_polygons(tri_xy):
    """The three ``A_K^T`` quadrilaterals (vertex, midpoint, barycentre, midpoint), counter-clockwise."""
    tri_xy = np.asarray(tri_xy, dtype=float)
    bary = tri_xy.mean(axis=-2)
    polys = []
    for k in range(3):
        v, nxt, prv = tri_xy[..., k, :], tri_xy[..., (k + 1) % 3, :], tri_xy[..., (k + 2) % 3, :]
        polys.append(np.stack([v, 0.5 * (v + nxt), bary, 0.5 * (v + prv)], axis=-2))
    return np.stack(polys, axis=-3)


def upwind_saturation_cvfe(dp, s_K, s_L, s_triangle, coeff):
    """Interface saturation ``s_KL`` of the CVFE scheme.

    Positive coefficients upwind on ``dp = p_L - p_K`` (``s_L`` when
    ``dp >= 0``); negative coefficients take the smallest saturation of the
    triangle.
    """
    up = np.where(np.asarray(dp) >= 0, s_L, s_K)
    return np.where(np.asarray(coeff) >= 0, up, np.min(s_triangle, axis=-1))


@dataclass(frozen=True)
class CvfeMesh:
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), counter-clockwise
    dirichlet: np.ndarray         # (nv,) bool
    area: np.ndarray              # (nt,)
    grads: np.ndarray             # (nt, 3, 2)
    Lambda: np.ndarray            # (nt, 2, 2)
    coeffs: np.ndarray            # (nt, 3) for PAIRS
    dual_parts: np.ndarray        # (nt, 3) |A_K^T|
    dual_volume: np.ndarray       # (nv,)
    boundary_edges: np.ndarray    # (nb, 2)
    boundary_dirichlet: np.ndarray  # (nb,) bool

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def dof_nodes(self):
        return np.flatnonzero(~self.dirichlet)

    @property
    def dof_count(self):
        return int(np.count_nonzero(~self.dirichlet))

    def expand(self, u_dof):
        u = np.zeros(self.n_vertices)
        u[self.dof_nodes] = u_dof
        return u

    def restrict(self, u_full):
        return np.asarray(u_full)[self.dof_nodes]

    @property
    def pair_nodes(self):
        """``(K, L)`` global vertex indices, each ``(nt, 3)``."""
        return self.triangles[:, PAIRS[:, 0]], self.triangles[:, PAIRS[:, 1]]

    def vertex_average(self, tri_values):
        """Control-volume-weighted mean of a per-triangle field."""
        tri_values = np.asarray(tri_values, dtype=float)
        w = self.dual_parts * tri_values[:, None]
        return np.bincount(self.triangles.ravel(), weights=w.ravel(),
                           minlength=self.n_vertices) / self.dual_volume

    def stiffness_matrix(self, coeffs=None, dof_only=True):
        """Assembled ``sum_T sum_pairs c (delta u)^2`` quadratic form."""
        c = self.coeffs if coeffs is None else coeffs
        K, L = self.pair_nodes
        K, L, c = K.ravel(), L.ravel(), np.ravel(c)
        n = self.n_vertices
        off = sp.csr_matrix((-c, (K, L)), shape=(n, n))
        A = off + off.T
        A = A - sp.diags(np.asarray(A.sum(axis=1)).ravel())
        if dof_only:
            idx = self.dof_nodes
            A = A[idx][:, idx]
        return sp.csr_matrix(A)

    @cached_property
    def laplace_coeffs(self):
        return stiffness_coeffs(self.vertices[self.triangles])

    def vertex_adjacency(self):
        t = self.triangles
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices,) * 2)
        return A.astype(bool)

    def stats(self):
        return {
            "vertices": self.n_vertices,
            "triangles": int(len(self.triangles)),
            "dofs_per_phase": self.dof_count,
            "dirichlet_nodes": int(np.count_nonzero(self.dirichlet)),
            "negative_coefficients": int(np.count_nonzero(self.coeffs < 0)),
            "coeff_min": float(self.coeffs.min()),
            "coeff_max": float(self.coeffs.max()),
            "area_triangles": float(self.area.sum()),
            "area_dual": float(self.dual_volume.sum()),
        }


def build_from_triangles(vertices, triangles, dirichlet, permeability=None):
    """CVFE mesh from a conforming triangle list.

    ``dirichlet`` follows the DDFV convention: a predicate on boundary-edge
    midpoints, a bool array over the boundary edges, or a dict keyed by
    sorted vertex pairs. A vertex is Dirichlet when any incident boundary
    edge is.
    """
    vertices = np.asarray(vertices, dtype=float)
    tri = np.asarray(triangles, dtype=int).copy()
    xy = vertices[tri]
    signed = 0.5 * cross2(xy[:, 1] - xy[:, 0], xy[:, 2] - xy[:, 0])
    if np.any(np.abs(signed) <= 1e-14):
        raise InvalidMesh("degenerate triangle")
    flip = signed < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    xy = vertices[tri]
    grads, area = p1_gradients(xy)

    edges = {}
    for t in tri:
        for a, b in zip(t, np.roll(t, -1)):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    if any(v > 2 for v in edges.values()):
        raise InvalidMesh("edge shared by more than two triangles (non-conforming)")
    bedges = np.array(sorted(k for k, v in edges.items() if v == 1), dtype=int).reshape(-1, 2)
    bmid = 0.5 * (vertices[bedges[:, 0]] + vertices[bedges[:, 1]])
    if callable(dirichlet):
        bdir = np.asarray(dirichlet(bmid), dtype=bool)
    elif isinstance(dirichlet, dict):
        bdir = np.array([bool(dirichlet.get(tuple(e), False)) for e in bedges.tolist()])
    else:
        bdir = np.asarray(dirichlet, dtype=bool)
    if bdir.shape != (len(bedges),):
        raise InvalidMesh("Dirichlet selector does not match the boundary edges")
    vdir = np.zeros(len(vertices), dtype=bool)
    vdir[bedges[bdir].ravel()] = True

    bary = xy.mean(axis=1)
    Lambda = tensor_field(permeability, bary)
    coeffs = stiffness_coeffs(xy, Lambda)
    parts = shoelace(dual_polygons(xy))
    dual_volume = np.bincount(tri.ravel(), weights=parts.ravel(), minlength=len(vertices))
    if np.any(dual_volume <= 0):
        raise InvalidMesh("vertex not attached to any triangle")
    return CvfeMesh(vertices=vertices, triangles=tri, dirichlet=vdir, area=area, grads=grads,
                    Lambda=Lambda, coeffs=coeffs, dual_parts=parts, dual_volume=dual_volume,
                    boundary_edges=bedges, boundary_dirichlet=bdir)


def build_triangulation(nx, ny, dirichlet=None, split="diagonal", distortion=0.0,
                        permeability=None, seed=0):
    """Structured triangulation of the unit square.

    ``split="diagonal"`` cuts every square along its SW-NE diagonal;
    ``split="acute"`` alternates the diagonal in a checkerboard so that
    every vertex sees a symmetric fan (all coefficients non-negative for
    ``Lambda = I``).
    """
    if split not in ("diagonal", "acute"):
        raise InvalidMesh(f"unknown split {split!r}")
    xy = structured_vertices(nx, ny, distortion, seed)

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            sw, se, ne, nw = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if split == "diagonal" or (i + j) % 2 == 0:
                tris += [[sw, se, ne], [sw, ne, nw]]
            else:
                tris += [[sw, se, nw], [se, ne, nw]]
    if dirichlet is None:
        dirichlet = boundary_sides("all")
    return build_from_triangles(xy, tris, dirichlet, permeability)


@dataclass(frozen=True)
class PairTerms:
    """Per-triangle-pair pieces of the CVFE residual (for energy checks)."""

    rho: np.ndarray           # (2, nt, 3)
    conv: np.ndarray          # rho M c dp
    cap: np.ndarray           # eta sign rho |c| dp_c on non-negative pairs
    mob: np.ndarray           # eps-shifted mobilities at the interface saturation
    dp: np.ndarray            # (2, nt, 3)
    dpc: np.ndarray           # (nt, 3)
    accumulation: np.ndarray  # (2, nv)
    negative_branch: int


class CvfeScheme(SchemeBackend):
    """Regularised CVFE residual on a :class:`CvfeMesh`.

    Parameters
    ----------
    mesh : CvfeMesh
    fluid : FluidModel
    porosity : float or (n_triangles,) array
    dt : float
    """

    def __init__(self, mesh: CvfeMesh, fluid: FluidModel, porosity=0.3, dt=0.01):
        if dt <= 0:
            raise InvalidParams("dt must be positive")
        phi = np.broadcast_to(np.asarray(porosity, dtype=float), (len(mesh.triangles),)).copy()
        if np.any(phi <= 0):
            raise InvalidParams("porosity must be positive")
        self.mesh = mesh
        self.fluid = fluid
        self.dt = float(dt)
        self.tri_porosity = phi
        self.node_porosity = mesh.vertex_average(phi)
        self.pore_volume = mesh.dual_volume * self.node_porosity
        self.positive = mesh.coeffs >= 0

    @property
    def dof_count(self):
        return self.mesh.dof_count

    @property
    def porosity_bounds(self):
        return float(self.tri_porosity.min()), float(self.tri_porosity.max())

    def node_adjacency_dofs(self):
        idx = self.mesh.dof_nodes
        return self.mesh.vertex_adjacency()[idx][:, idx]

    @cached_property
    def norm_matrix(self):
        """``||u||_{V_T}^2``: P1 Dirichlet energy with the identity tensor."""
        return self.mesh.stiffness_matrix(self.mesh.laplace_coeffs)

    @cached_property
    def stiffness(self):
        return self.mesh.stiffness_matrix()

    @cached_property
    def l1_weights(self):
        return self.mesh.dual_volume[self.mesh.dof_nodes]

    def row_scale(self):
        s = self.pore_volume[self.mesh.dof_nodes]
        return np.concatenate([s, s])

    # ------------------------------------------------------------------
    def pair_terms(self, state, prev, eps=0.0, eta=0.0, regularize=True):
        if eps < 0 or eta < 0:
            raise InvalidParams("eps and eta must be non-negative")
        m, fluid = self.mesh, self.fluid
        pg, pw = m.expand(state.p_g), m.expand(state.p_w)
        pg_n, pw_n = m.expand(prev.p_g), m.expand(prev.p_w)
        s_g, _ = fluid.coupling_G(pg, pw)
        s_g_n, _ = fluid.coupling_G(pg_n, pw_n)
        K, L = m.pair_nodes
        c = m.coeffs
        pc = pg - pw
        dpc = pc[L] - pc[K]
        shape = (2,) + c.shape
        rho, conv, cap = np.empty(shape), np.empty(shape), np.zeros(shape)
        mob_kl, dps = np.empty(shape), np.empty(shape)
        acc = np.empty((2, m.n_vertices))
        for phase, p, p_n, s, s_n in ((Phase.GAS, pg, pg_n, s_g, s_g_n),
                                      (Phase.WETTING, pw, pw_n, 1.0 - s_g, 1.0 - s_g_n)):
            i = int(phase)
            dp = p[L] - p[K]
            s_kl = upwind_saturation_cvfe(dp, s[K], s[L], s[m.triangles][:, None, :], c)
            mob = fluid.mobility(phase, s_kl)
            if regularize:
                mob = eps + mob
            r = fluid.interface_density(phase, p[K], p[L])
            rho[i], mob_kl[i], dps[i] = r, mob, dp
            conv[i] = r * mob * c * dp
            if regularize:
                cap[i] = np.where(self.positive, eta * phase.sign * r * np.abs(c) * dpc, 0.0)
            acc[i] = self.pore_volume * (fluid.rho(phase, p) * clamp_Z(s) - fluid.rho(phase, p_n) * s_n)
        return PairTerms(rho=rho, conv=conv, cap=cap, mob=mob_kl, dp=dps, dpc=dpc,
                         accumulation=acc, negative_branch=int(np.count_nonzero(~self.positive)))

    def _scatter(self, pt):
        m = self.mesh
        K, L = m.pair_nodes
        K, L = K.ravel(), L.ravel()
        n = m.n_vertices
        res = pt.accumulation.copy()
        total = pt.conv + pt.cap
        for i in range(2):
            f = self.dt * total[i].ravel()
            res[i] += np.bincount(L, weights=f, minlength=n) - np.bincount(K, weights=f, minlength=n)
        idx = m.dof_nodes
        return np.concatenate([res[0, idx], res[1, idx]])

    def residual(self, state, prev, eps=0.0, eta=0.0):
        """``F^{eps,eta}(state, prev)``, gas rows then wetting rows."""
        return self._scatter(self.pair_terms(state, prev, eps, eta))

    def base_residual(self, state, prev):
        """Unregularised scheme, assembled without the eps and eta terms."""
        return self._scatter(self.pair_terms(state, prev, regularize=False))

    # ------------------------------------------------------------------
    def g_full(self, state):
        m = self.mesh
        return np.stack([self.fluid.g(Phase.GAS, m.expand(state.p_g)),
                         self.fluid.g(Phase.WETTING, m.expand(state.p_w))])

    def energy_terms(self, state, prev, eps=0.0, eta=0.0):
        """Split of ``<F, g(p)>``; see :meth:`DdfvScheme.energy_terms`."""
        pt = self.pair_terms(state, prev, eps, eta)
        g = self.g_full(state)
        K, L = self.mesh.pair_nodes
        idx = self.mesh.dof_nodes
        dg = np.stack([gi[L] - gi[K] for gi in g])
        res = self._scatter(pt)
        gvec = np.concatenate([g[0, idx], g[1, idx]])
        return {"gamma1": float(np.sum(pt.accumulation[:, idx] * g[:, idx])),
                "gamma2": float(self.dt * np.sum(pt.conv * dg)),
                "gamma3": float(self.dt * np.sum(pt.cap * dg)),
                "pairing": float(res @ gvec), "g_norm": float(np.linalg.norm(gvec)),
                "fluxes": pt}

    def convective_quadratic_form(self, pt):
        """``dt sum M(s_KL) Lambda_KL^T (dp)^2`` over both phases."""
        return float(self.dt * np.sum(pt.mob * self.mesh.coeffs * pt.dp ** 2))

    def capillary_quadratic_form(self, state):
        """``sum_T sum_{E_T^+} |Lambda_KL^T| (delta p_c)^2``."""
        m = self.mesh
        K, L = m.pair_nodes
        pc = m.expand(state.p_g - state.p_w)
        return float(np.sum(np.where(self.positive, np.abs(m.coeffs) * (pc[L] - pc[K]) ** 2, 0.0)))

    def pressure_quadratic_form(self, u_dof):
        """``u^T S_Lambda u`` with the assembled stiffness matrix."""
        return float(u_dof @ (self.stiffness @ u_dof))

    def accumulation_constants(self, prev):
        w = self.l1_weights
        return float(sum(np.sum(w * np.abs(self.fluid.H(ph, p)))
                         for ph, p in ((Phase.GAS, prev.p_g), (Phase.WETTING, prev.p_w))))

    def energy_constant_factor(self):
        return 1.0

    def dof_coordinates(self):
        return self.mesh.vertices[self.mesh.dof_nodes]

    def state_from_fields(self, p_g_fun, p_w_fun):
        xy = self.dof_coordinates()
        return State(np.asarray(p_g_fun(xy[:, 0], xy[:, 1]), float) * np.ones(len(xy)),
                     np.asarray(p_w_fun(xy[:, 0], xy[:, 1]), float) * np.ones(len(xy)), self.fluid)
