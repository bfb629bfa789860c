"""Assembly of the stabilized bilinear form over the enriched space.

The form combines cut-aware volume diffusion with edge terms: a flux
consistency term on every edge, its (skew-)adjoint scaled by theta, and a
penalty on jumps scaled by sigma/|e|.  On boundary edges the adjoint and
penalty terms act through edge means, which weakly imposes the Dirichlet
data while keeping the theta = -1 form symmetric.

Edges where every participating trace is plain linear (interior, uncut,
both neighbors one-sided) reduce to closed forms and are assembled in
vectorized batches; cut, interface-adjacent and boundary edges go through
generic per-segment quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import linalg
from .ifem_space import EnrichedSpace
from .problems import ProblemSpec
from .quadrature import gauss_unit, triangle_points, triangle_rule


class AssemblyError(Exception):
    pass


@dataclass(frozen=True)
class AssemblyParams:
    theta: float = -1.0          # -1: symmetric form, CG-compatible
    kappa: float = 10.0          # penalty sigma_e = kappa * max adjacent beta
    rhs_degree: int = 4
    edge_npts: int = 2           # Gauss points per edge segment
    data_npts: int = 4           # Gauss points for Dirichlet edge means

    def __post_init__(self):
        if self.theta not in (-1.0, 0.0, 1.0):
            raise ValueError(f"theta must be -1, 0 or 1, got {self.theta}")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


@dataclass
class BlockSparseSystem:
    """Reduced SPD(-structured) system on the free degrees of freedom.

    Free ordering: interior vertices ascending, then one constant per
    element.  rhs_const_raw keeps the plain source integrals per element,
    before any boundary-data contribution, for conservation checks.
    """

    space: EnrichedSpace
    params: AssemblyParams
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_nodal: int
    boundary_values: np.ndarray   # (nv,), Dirichlet data at boundary vertices
    rhs_const_raw: np.ndarray     # (nt,)
    sigma_edge: np.ndarray        # (ne,)
    boundary_g_mean: np.ndarray   # (ne,), edge mean of g; nan off the boundary

    @property
    def n_free(self) -> int:
        return self.matrix.shape[0]

    def block(self, i: int, j: int) -> sp.csr_matrix:
        n1 = self.n_nodal
        sl = (slice(0, n1), slice(n1, None))
        return self.matrix[sl[i - 1], sl[j - 1]].tocsr()

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        """Free-ordered solution to a full vector (with boundary data)."""
        x_free = np.asarray(x_free, dtype=float)
        if x_free.shape[0] != self.n_free:
            raise linalg.DimensionMismatch(
                f"solution has {x_free.shape[0]} entries, need {self.n_free}"
            )
        full = np.zeros(self.space.n_full)
        full[self.space.free_dofs] = x_free
        bnd = self.space.mesh.boundary_vertex
        full[: self.space.n_vertices][bnd] = self.boundary_values[bnd]
        return full


def edge_sigma(space: EnrichedSpace, kappa: float) -> np.ndarray:
    """Penalty weight per edge: kappa times the largest coefficient value
    present in either adjacent element."""
    mesh = space.mesh
    bm = space.elem_beta_max
    s0 = bm[mesh.edge_elems[:, 0]]
    e1 = mesh.edge_elems[:, 1]
    s1 = np.where(e1 >= 0, bm[np.maximum(e1, 0)], 0.0)
    return kappa * np.maximum(s0, s1)


def _special_edge_mask(space: EnrichedSpace) -> np.ndarray:
    mesh = space.mesh
    cls = space.classification
    is_if = np.zeros(mesh.n_elems, dtype=bool)
    is_if[cls.interface_elems] = True
    e0, e1 = mesh.edge_elems[:, 0], mesh.edge_elems[:, 1]
    adj_if = is_if[e0] | ((e1 >= 0) & is_if[np.maximum(e1, 0)])
    mismatch = (e1 >= 0) & (cls.elem_side[e0] != cls.elem_side[np.maximum(e1, 0)])
    return mesh.boundary_edge | cls.edge_is_cut | adj_if | mismatch


def _elem_edge_data(space: EnrichedSpace, t: int, q: np.ndarray, n: np.ndarray):
    """Trace values and scaled normal-derivative of the 4 local functions
    (3 nodal + constant) of element t at edge point q."""
    if t in space.cut_elements:
        side = int(space.cut_elements[t].side_of(q[0], q[1]))
        coef = space.local_bases[t].coef(side)
        vals = coef[:, 0] + coef[:, 1] * q[0] + coef[:, 2] * q[1]
        grads = coef[:, 1:]
        beta = space.beta_plus if side > 0 else space.beta_minus
    else:
        g = space.grad_nodal[t]
        c = space.mesh.elem_coords(t).mean(axis=0)
        vals = 1.0 / 3.0 + g @ (q - c)
        grads = g
        beta = float(space.elem_beta[t])
    return np.append(vals, 1.0), np.append(beta * (grads @ n), 0.0)


def _edge_segments(mesh, cls, e) -> list:
    a = mesh.vertices[mesh.edges[e, 0]]
    b = mesh.vertices[mesh.edges[e, 1]]
    if cls.edge_is_cut[e]:
        q = cls.edge_cut_point[e]
        return [(a, q), (q, b)]
    return [(a, b)]


def assemble(space: EnrichedSpace, problem: ProblemSpec,
             params: AssemblyParams = AssemblyParams()) -> BlockSparseSystem:
    """Assemble the reduced linear system for -div(beta grad p) = -f with
    Dirichlet data problem.g (nodal values imposed strongly, edge means
    weakly)."""
    mesh = space.mesh
    cls = space.classification
    nv, nt, nfull = space.n_vertices, space.n_elems, space.n_full
    theta = params.theta
    sigma = edge_sigma(space, params.kappa)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.asarray(r, dtype=np.int64).ravel())
        cols.append(np.asarray(c, dtype=np.int64).ravel())
        vals.append(np.asarray(v, dtype=float).ravel())

    # --- volume diffusion -------------------------------------------------
    plain_elems = np.flatnonzero(cls.elem_side != 0)
    if plain_elems.size:
        g = space.grad_nodal[plain_elems]
        w = space.elem_beta[plain_elems] * space.elem_area[plain_elems]
        k_loc = np.einsum("t,tid,tjd->tij", w, g, g)
        verts = mesh.triangles[plain_elems]
        add(np.repeat(verts, 3, axis=1), np.tile(verts, (1, 3)), k_loc)

    for t in cls.interface_elems:
        t = int(t)
        cut = space.cut_elements[t]
        basis = space.local_bases[t]
        verts = mesh.triangles[t]
        k_loc = np.zeros((3, 3))
        for side, beta, area in (
            (1, space.beta_plus, cut.area_plus),
            (-1, space.beta_minus, cut.area_minus),
        ):
            gr = basis.coef(side)[:, 1:]
            k_loc += beta * area * (gr @ gr.T)
        add(np.repeat(verts, 3), np.tile(verts, 3), k_loc)

    # --- plain interior edges (closed form) -------------------------------
    special = _special_edge_mask(space)
    plain = np.flatnonzero(~special)
    if plain.size:
        e0 = mesh.edge_elems[plain, 0]
        e1 = mesh.edge_elems[plain, 1]
        n = mesh.edge_normal[plain]
        length = mesh.edge_length[plain]
        beta = space.elem_beta[e0]
        sig = sigma[plain]
        c0 = nv + e0
        c1 = nv + e1
        # half the edge integral of beta * (grad basis . n), per local vertex
        f0 = 0.5 * beta[:, None] * length[:, None] * np.einsum(
            "kjd,kd->kj", space.grad_nodal[e0], n
        )
        f1 = 0.5 * beta[:, None] * length[:, None] * np.einsum(
            "kjd,kd->kj", space.grad_nodal[e1], n
        )
        v0 = mesh.triangles[e0]
        v1 = mesh.triangles[e1]
        rep = lambda c: np.repeat(c, 3).reshape(-1, 3)
        # consistency: constant-jump rows against trial flux columns
        add(rep(c0), v0, -f0)
        add(rep(c0), v1, -f1)
        add(rep(c1), v0, f0)
        add(rep(c1), v1, f1)
        # adjoint term, transposed with the theta weight
        add(v0, rep(c0), theta * f0)
        add(v1, rep(c0), theta * f1)
        add(v0, rep(c1), -theta * f0)
        add(v1, rep(c1), -theta * f1)
        # jump penalty couples only the two constants
        add(c0, c0, sig)
        add(c1, c1, sig)
        add(c0, c1, -sig)
        add(c1, c0, -sig)

    # --- special edges (generic quadrature) + boundary data rhs -----------
    gt, gw = gauss_unit(params.edge_npts)
    dt, dw = gauss_unit(params.data_npts)
    rhs = np.zeros(nfull)
    boundary_g_mean = np.full(mesh.n_edges, np.nan)

    for e in np.flatnonzero(special):
        e = int(e)
        elems = [int(mesh.edge_elems[e, 0])]
        boundary = mesh.edge_elems[e, 1] < 0
        if not boundary:
            elems.append(int(mesh.edge_elems[e, 1]))
        n = mesh.edge_normal[e]
        length = float(mesh.edge_length[e])
        sig = float(sigma[e])
        w_avg = 1.0 if boundary else 0.5

        dofs = []
        for t in elems:
            dofs.extend(int(v) for v in mesh.triangles[t])
            dofs.append(nv + t)
        dofs = np.array(dofs, dtype=np.int64)
        nd = dofs.size

        local = np.zeros((nd, nd))
        int_j = np.zeros(nd)
        int_f = np.zeros(nd)
        for a, b in _edge_segments(mesh, cls, e):
            seg_len = float(np.hypot(*(b - a)))
            if seg_len == 0.0:
                continue
            for tq, wq in zip(gt, gw):
                q = a + tq * (b - a)
                wgt = wq * seg_len
                jmp = np.zeros(nd)
                flx = np.zeros(nd)
                for k, t in enumerate(elems):
                    v4, f4 = _elem_edge_data(space, t, q, n)
                    s = 1.0 if k == 0 else -1.0
                    jmp[4 * k:4 * k + 4] = s * v4
                    flx[4 * k:4 * k + 4] = w_avg * f4
                local -= wgt * np.outer(jmp, flx)
                int_j += wgt * jmp
                int_f += wgt * flx
                if not boundary:
                    local += wgt * (theta * np.outer(flx, jmp)
                                    + (sig / length) * np.outer(jmp, jmp))
        if boundary:
            # adjoint and penalty act through edge means on the boundary
            local += theta * np.outer(int_f, int_j) / length
            local += (sig / length**2) * np.outer(int_j, int_j)
            a = mesh.vertices[mesh.edges[e, 0]]
            b = mesh.vertices[mesh.edges[e, 1]]
            pts = a[None, :] + dt[:, None] * (b - a)[None, :]
            g_mean = float(np.dot(dw, np.asarray(problem.g(pts[:, 0], pts[:, 1]))))
            boundary_g_mean[e] = g_mean
            rhs[dofs] += theta * g_mean * int_f + (sig / length) * g_mean * int_j
        add(np.repeat(dofs, nd), np.tile(dofs, nd), local)

    a_full = linalg.build_csr(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
        (nfull, nfull),
    )
    del rows, cols, vals

    # --- source term ------------------------------------------------------
    rhs_const_raw = np.zeros(nt)
    bary, bw = triangle_rule(params.rhs_degree)
    if plain_elems.size:
        p = mesh.vertices[mesh.triangles[plain_elems]]        # (k, 3, 2)
        pts = np.einsum("qi,kid->kqd", bary, p)               # (k, nq, 2)
        fv = np.asarray(problem.f(pts[..., 0], pts[..., 1]))  # (k, nq)
        area = space.elem_area[plain_elems]
        contrib = area[:, None] * np.einsum("kq,qi->ki", fv * bw[None, :], bary)
        np.add.at(rhs, mesh.triangles[plain_elems], contrib)
        rhs_const_raw[plain_elems] = area * (fv @ bw)

    for t in cls.interface_elems:
        t = int(t)
        cut = space.cut_elements[t]
        basis = space.local_bases[t]
        verts = mesh.triangles[t]
        for side, tris in ((1, cut.tris_plus), (-1, cut.tris_minus)):
            coef = basis.coef(side)
            for sub in tris:
                area = abs(
                    0.5 * ((sub[1, 0] - sub[0, 0]) * (sub[2, 1] - sub[0, 1])
                           - (sub[1, 1] - sub[0, 1]) * (sub[2, 0] - sub[0, 0]))
                )
                pts = triangle_points(sub, bary)
                fv = np.asarray(problem.f(pts[:, 0], pts[:, 1]))
                vb = coef[:, 0][:, None] + coef[:, 1][:, None] * pts[:, 0] \
                    + coef[:, 2][:, None] * pts[:, 1]           # (3, nq)
                rhs[verts] += area * (vb * (fv * bw)).sum(axis=1)
                rhs_const_raw[t] += area * float(np.dot(fv, bw))
    rhs[nv:] += rhs_const_raw

    # --- strong Dirichlet elimination -------------------------------------
    bnd = mesh.boundary_vertex
    boundary_values = np.zeros(nv)
    bv = mesh.vertices[bnd]
    boundary_values[bnd] = np.asarray(problem.g(bv[:, 0], bv[:, 1]), dtype=float)
    lift = np.zeros(nfull)
    lift[:nv][bnd] = boundary_values[bnd]

    free = space.free_dofs
    rhs_free = rhs[free] - (a_full @ lift)[free]
    a_free = a_full[free][:, free].tocsr()
    a_free.sort_indices()

    return BlockSparseSystem(
        space=space,
        params=params,
        matrix=a_free,
        rhs=rhs_free,
        n_nodal=space.n_nodal_free,
        boundary_values=boundary_values,
        rhs_const_raw=rhs_const_raw,
        sigma_edge=sigma,
        boundary_g_mean=boundary_g_mean,
    )
