"""Error norms, convergence-order fitting, and study pipelines.

Error integration is cut-aware: on interface elements the quadrature runs
over the sub-triangles of each side, the discrete solution picks its side
from the straight cut, and the exact solution classifies points with the
level set itself.  The mismatch strip between the two is part of the
measured error.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .assembly import (
    AssemblyParams,
    BlockSparseSystem,
    _edge_segments,
    _elem_edge_data,
    _special_edge_mask,
    assemble,
)
from .flux import RecoveredFlux, conservation_report, recover_flux
from .ifem_space import EnrichedSpace, build_space
from .mesh import build_mesh, classify_mesh
from .problems import ProblemSpec
from .quadrature import gauss_unit, triangle_points, triangle_rule
from .solver import PrecondParams, solve_system

ERROR_DEGREE = 6


class AnalysisError(Exception):
    pass


class NonHalvingSequence(AnalysisError):
    pass


def _sub_area(sub: np.ndarray) -> float:
    return abs(
        0.5 * ((sub[1, 0] - sub[0, 0]) * (sub[2, 1] - sub[0, 1])
               - (sub[1, 1] - sub[0, 1]) * (sub[2, 0] - sub[0, 0]))
    )


def _cut_pieces(space: EnrichedSpace, t: int):
    """(side, sub-triangle) pairs covering a cut element."""
    cut = space.cut_elements[t]
    for sub in cut.tris_plus:
        yield 1, sub
    for sub in cut.tris_minus:
        yield -1, sub


def error_L2(space: EnrichedSpace, full: np.ndarray, problem: ProblemSpec,
             degree: int = ERROR_DEGREE) -> float:
    """Broken L2 distance between the discrete and exact potential."""
    mesh = space.mesh
    bary, bw = triangle_rule(degree)
    total = 0.0

    plain = np.flatnonzero(space.classification.elem_side != 0)
    if plain.size:
        p = mesh.vertices[mesh.triangles[plain]]
        pts = np.einsum("qi,kid->kqd", bary, p)
        ph = np.einsum("qi,ki->kq", bary, full[mesh.triangles[plain]]) \
            + full[space.n_vertices + plain][:, None]
        ex = np.asarray(problem.p(pts[..., 0], pts[..., 1]))
        total += float(np.sum(space.elem_area[plain] * ((ph - ex) ** 2 @ bw)))

    for t in space.classification.interface_elems:
        t = int(t)
        verts = mesh.triangles[t]
        c = full[space.const_dof(t)]
        basis = space.local_bases[t]
        for side, sub in _cut_pieces(space, t):
            coef = basis.coef(side)
            pts = triangle_points(sub, bary)
            ph = c + full[verts] @ (
                coef[:, 0][:, None] + coef[:, 1][:, None] * pts[:, 0]
                + coef[:, 2][:, None] * pts[:, 1]
            )
            ex = np.asarray(problem.p(pts[:, 0], pts[:, 1]))
            total += _sub_area(sub) * float(((ph - ex) ** 2) @ bw)
    return float(np.sqrt(total))


def error_energy(space: EnrichedSpace, full: np.ndarray, problem: ProblemSpec,
                 degree: int = ERROR_DEGREE,
                 system: Optional[BlockSparseSystem] = None) -> float:
    """Broken H1 norm of the error plus scaled edge-jump terms.

    Boundary jumps compare the trace against the Dirichlet data.
    """
    mesh = space.mesh
    bary, bw = triangle_rule(degree)
    total = 0.0

    plain = np.flatnonzero(space.classification.elem_side != 0)
    if plain.size:
        p = mesh.vertices[mesh.triangles[plain]]
        pts = np.einsum("qi,kid->kqd", bary, p)
        pv = full[mesh.triangles[plain]]
        ph = np.einsum("qi,ki->kq", bary, pv) + full[space.n_vertices + plain][:, None]
        gh = np.einsum("ki,kid->kd", pv, space.grad_nodal[plain])
        ex = np.asarray(problem.p(pts[..., 0], pts[..., 1]))
        gex = np.asarray(problem.grad_p(pts[..., 0], pts[..., 1]))
        dg = gex - gh[:, None, :]
        vals = (ph - ex) ** 2 + dg[..., 0] ** 2 + dg[..., 1] ** 2
        total += float(np.sum(space.elem_area[plain] * (vals @ bw)))

    for t in space.classification.interface_elems:
        t = int(t)
        verts = mesh.triangles[t]
        c = full[space.const_dof(t)]
        basis = space.local_bases[t]
        for side, sub in _cut_pieces(space, t):
            coef = basis.coef(side)
            pts = triangle_points(sub, bary)
            ph = c + full[verts] @ (
                coef[:, 0][:, None] + coef[:, 1][:, None] * pts[:, 0]
                + coef[:, 2][:, None] * pts[:, 1]
            )
            gh = full[verts] @ coef[:, 1:]
            ex = np.asarray(problem.p(pts[:, 0], pts[:, 1]))
            gex = np.asarray(problem.grad_p(pts[:, 0], pts[:, 1]))
            vals = (ph - ex) ** 2 + (gex[:, 0] - gh[0]) ** 2 + (gex[:, 1] - gh[1]) ** 2
            total += _sub_area(sub) * float(vals @ bw)

    # edge jumps: the exact solution is continuous, so interior jumps are
    # jumps of p_h; plain edges carry only the constant jump
    nv = space.n_vertices
    special = _special_edge_mask(space)
    plain_e = np.flatnonzero(~special)
    if plain_e.size:
        cjump = full[nv + mesh.edge_elems[plain_e, 0]] - full[nv + mesh.edge_elems[plain_e, 1]]
        total += float(np.sum(cjump**2))

    gt, gw = gauss_unit(max(2, (degree + 2) // 2))
    cls = space.classification
    for e in np.flatnonzero(special):
        e = int(e)
        t0 = int(mesh.edge_elems[e, 0])
        t1 = int(mesh.edge_elems[e, 1])
        length = float(mesh.edge_length[e])
        n = mesh.edge_normal[e]
        acc = 0.0
        for a, b in _edge_segments(mesh, cls, e):
            seg_len = float(np.hypot(*(b - a)))
            if seg_len == 0.0:
                continue
            for tq, wq in zip(gt, gw):
                q = a + tq * (b - a)
                d0 = np.append(full[mesh.triangles[t0]], full[nv + t0])
                v0, _ = _elem_edge_data(space, t0, q, n)
                tr0 = float(d0 @ v0)
                if t1 >= 0:
                    d1 = np.append(full[mesh.triangles[t1]], full[nv + t1])
                    v1, _ = _elem_edge_data(space, t1, q, n)
                    jump = tr0 - float(d1 @ v1)
                else:
                    jump = float(problem.g(q[0], q[1])) - tr0
                acc += wq * seg_len * jump**2
        total += acc / length
    return float(np.sqrt(total))


def error_flux(space: EnrichedSpace, recovered: RecoveredFlux, problem: ProblemSpec,
               degree: int = ERROR_DEGREE):
    """(L2, Hdiv-seminorm) errors of the recovered RT0 field.

    The recovered field on element T is affine, u_h = d x + g with scalar
    d; the divergence error compares 2d against the exact source.
    """
    mesh = space.mesh
    bary, bw = triangle_rule(degree)

    lengths = mesh.edge_length[mesh.elem_edges]
    fluxes = recovered.edge_flux[mesh.elem_edges]
    coefs = recovered.out_sign * lengths * fluxes / (2.0 * space.elem_area[:, None])
    d = coefs.sum(axis=1)                                    # (nt,)
    opp = mesh.vertices[mesh.triangles][:, [2, 0, 1], :]     # opposite vertex per edge
    g = -np.einsum("tk,tkd->td", coefs, opp)                 # (nt, 2)

    total_l2 = 0.0
    total_div = 0.0
    plain = np.flatnonzero(space.classification.elem_side != 0)
    if plain.size:
        p = mesh.vertices[mesh.triangles[plain]]
        pts = np.einsum("qi,kid->kqd", bary, p)
        uh = d[plain, None, None] * pts + g[plain][:, None, :]
        ue = np.asarray(problem.u(pts[..., 0], pts[..., 1]))
        diff = uh - ue
        total_l2 += float(
            np.sum(space.elem_area[plain] * ((diff**2).sum(axis=-1) @ bw))
        )
        fe = np.asarray(problem.f(pts[..., 0], pts[..., 1]))
        total_div += float(
            np.sum(space.elem_area[plain] * (((2.0 * d[plain, None] - fe) ** 2) @ bw))
        )

    for t in space.classification.interface_elems:
        t = int(t)
        for _, sub in _cut_pieces(space, t):
            pts = triangle_points(sub, bary)
            uh = d[t] * pts + g[t]
            ue = np.asarray(problem.u(pts[:, 0], pts[:, 1]))
            area = _sub_area(sub)
            total_l2 += area * float(((uh - ue) ** 2).sum(axis=-1) @ bw)
            fe = np.asarray(problem.f(pts[:, 0], pts[:, 1]))
            total_div += area * float(((2.0 * d[t] - fe) ** 2) @ bw)
    return float(np.sqrt(total_l2)), float(np.sqrt(total_div))


# ---------------------------------------------------------------------------
# orders and reports


def fit_orders(h: Sequence[float], errors: Sequence[float]) -> List[Optional[float]]:
    """Pairwise log2 convergence orders; first entry is None."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size >= 2:
        ratios = h[:-1] / h[1:]
        if np.any(np.abs(ratios - 2.0) > 1e-9 * np.abs(ratios)):
            raise NonHalvingSequence(f"mesh sizes do not halve: {list(h)}")
    orders: List[Optional[float]] = [None]
    for k in range(1, h.size):
        orders.append(float(np.log2(e[k - 1] / e[k])))
    return orders


def tail_order(h: Sequence[float], errors: Sequence[float], steps: int = 2) -> float:
    """Least-squares order over the last `steps` refinements."""
    h = np.asarray(h, dtype=float)[-(steps + 1):]
    e = np.asarray(errors, dtype=float)[-(steps + 1):]
    slope = np.polyfit(np.log(h), np.log(e), 1)[0]
    return float(slope)


COLUMNS = [
    "inv_h", "l2", "l2_order", "energy", "energy_order", "flux_l2",
    "flux_l2_order", "flux_div", "flux_div_order", "max_conservation",
    "iterations", "wall_time",
]


@dataclass
class ErrorReport:
    problem: str
    rows: List[dict] = field(default_factory=list)

    def column(self, key: str) -> list:
        return [row[key] for row in self.rows]

    def with_orders(self) -> "ErrorReport":
        """Fill order columns from the error columns (None if not halving)."""
        h = [1.0 / row["inv_h"] for row in self.rows]
        for key in ("l2", "energy", "flux_l2", "flux_div"):
            try:
                orders = fit_orders(h, self.column(key))
            except NonHalvingSequence:
                orders = [None] * len(self.rows)
            for row, order in zip(self.rows, orders):
                row[f"{key}_order"] = order
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt_csv(row.get(k)) for k in COLUMNS])
        return buf.getvalue()

    def to_markdown(self) -> str:
        head = "| " + " | ".join(COLUMNS) + " |"
        sep = "|" + "|".join(["---"] * len(COLUMNS)) + "|"
        lines = [f"## {self.problem}", "", head, sep]
        for row in self.rows:
            lines.append("| " + " | ".join(_fmt_md(row.get(k)) for k in COLUMNS) + " |")
        return "\n".join(lines) + "\n"


def _fmt_csv(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12e}"
    return str(v)


def _fmt_md(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


# ---------------------------------------------------------------------------
# pipelines


def run_case(problem: ProblemSpec, n: int,
             params: AssemblyParams = AssemblyParams(),
             precond: PrecondParams = PrecondParams(),
             rtol: float = 1e-7, maxiter: int = 500,
             degree: int = ERROR_DEGREE, compute_errors: bool = True) -> dict:
    """Assemble, solve and postprocess one mesh; returns one report row
    plus the heavyweight objects for reuse."""
    t0 = time.perf_counter()
    mesh = build_mesh(n, bounds=problem.bounds)
    cls = classify_mesh(mesh, problem.level_set)
    space = build_space(mesh, cls, problem.beta_minus, problem.beta_plus)
    system = assemble(space, problem, params)
    x, stats = solve_system(system, precond, rtol=rtol, maxiter=maxiter)
    recovered = recover_flux(system, x)
    cons = conservation_report(system, recovered)
    wall = time.perf_counter() - t0

    row = {
        "inv_h": n,
        "max_conservation": cons["max_defect"],
        "iterations": stats.iterations,
        "wall_time": wall,
    }
    if compute_errors:
        full = system.expand(x)
        row["l2"] = error_L2(space, full, problem, degree)
        row["energy"] = error_energy(space, full, problem, degree)
        row["flux_l2"], row["flux_div"] = error_flux(space, recovered, problem, degree)
    for key in ("l2_order", "energy_order", "flux_l2_order", "flux_div_order"):
        row.setdefault(key, None)
    row["_objects"] = {
        "space": space, "system": system, "solution": x, "stats": stats,
        "flux": recovered, "conservation": cons,
    }
    return row


def convergence_study(problem: ProblemSpec, ns: Sequence[int],
                      params: AssemblyParams = AssemblyParams(),
                      precond: PrecondParams = PrecondParams(),
                      rtol: float = 1e-7, maxiter: int = 500,
                      degree: int = ERROR_DEGREE,
                      keep_objects: bool = False) -> ErrorReport:
    report = ErrorReport(problem=problem.name)
    for n in ns:
        row = run_case(problem, n, params, precond, rtol, maxiter, degree)
        if not keep_objects:
            row.pop("_objects")
        report.rows.append(row)
    return report.with_orders()
