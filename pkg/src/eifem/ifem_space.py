"""Immersed piecewise-linear bases on cut elements and the enriched space.

On each cut triangle the three vertex basis functions are replaced by
piecewise-linear functions that stay nodal at the vertices, are continuous
at the two cut points, and have a continuous scaled normal derivative
across the straight cut segment.  The enriched space adds one constant
degree of freedom per element; nodal degrees of freedom live on interior
vertices only (boundary values are imposed strongly).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from . import linalg
from .geometry import CutSegment, Side
from .mesh import MeshClassification, StructuredMesh
from .quadrature import triangle_points, triangle_rule

BASIS_COND_LIMIT = 1e14
SLIVER_REL = 1e-12


class SpaceError(Exception):
    pass


class SliverSubElement(SpaceError):
    pass


class SingularBasisSystem(SpaceError):
    pass


class PointOutsideElement(SpaceError):
    pass


@dataclass
class CutElement:
    """Geometry of one cut triangle: signed sub-polygons and their
    sub-triangulations for quadrature."""

    elem: int
    segment: CutSegment
    poly_minus: np.ndarray      # (k, 2) CCW loop
    poly_plus: np.ndarray
    tris_minus: np.ndarray      # (m, 3, 2)
    tris_plus: np.ndarray
    area_minus: float
    area_plus: float
    normal: np.ndarray          # unit normal of the cut segment, minus -> plus

    def side_of(self, x, y) -> np.ndarray:
        """+1 / -1 side classification against the straight cut segment."""
        s = (np.asarray(x) - self.segment.e1[0]) * self.normal[0] + (
            np.asarray(y) - self.segment.e1[1]
        ) * self.normal[1]
        return np.where(s >= 0.0, 1, -1)


def _poly_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _fan(poly: np.ndarray) -> np.ndarray:
    return np.array([[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)])


def build_cut_element(tri: np.ndarray, segment: CutSegment, vertex_sides: np.ndarray,
                      elem: int = -1) -> CutElement:
    """Split a triangle along its cut segment into signed sub-polygons.

    vertex_sides holds +1/-1 per vertex (consistent with the cut topology).
    """
    tri = np.asarray(tri, dtype=float)
    if segment.edge1 == segment.edge2:
        raise SliverSubElement("cut endpoints on the same edge")
    cut_pts = {segment.edge1: segment.e1, segment.edge2: segment.e2}

    chain = []  # (point, side); side 0 marks a cut point
    for k in range(3):
        chain.append((tri[k], int(vertex_sides[k])))
        if k in cut_pts:
            chain.append((np.asarray(cut_pts[k], dtype=float), 0))

    cut_pos = [i for i, (_, s) in enumerate(chain) if s == 0]
    i0, i1 = cut_pos
    loop_a = chain[i0:i1 + 1]
    loop_b = chain[i1:] + chain[:i0 + 1]

    polys = {}
    for loop in (loop_a, loop_b):
        sides = {s for _, s in loop if s != 0}
        if len(sides) != 1:
            raise SliverSubElement("inconsistent vertex sides across the cut")
        polys[sides.pop()] = np.array([p for p, _ in loop])

    poly_minus, poly_plus = polys[-1], polys[1]
    area_minus = _poly_area(poly_minus)
    area_plus = _poly_area(poly_plus)
    total = area_minus + area_plus
    if min(area_minus, area_plus) / total < SLIVER_REL:
        raise SliverSubElement(
            f"sub-element area ratio {min(area_minus, area_plus) / total:.3e}"
        )

    tangent = segment.e2 - segment.e1
    normal = np.array([tangent[1], -tangent[0]])
    normal /= np.hypot(normal[0], normal[1])
    # orient toward the plus polygon, tested on a plus-side vertex
    probe = next(tri[k] for k in range(3) if vertex_sides[k] > 0)
    if np.dot(normal, probe - segment.e1) < 0:
        normal = -normal

    return CutElement(
        elem=elem,
        segment=segment,
        poly_minus=poly_minus,
        poly_plus=poly_plus,
        tris_minus=_fan(poly_minus),
        tris_plus=_fan(poly_plus),
        area_minus=area_minus,
        area_plus=area_plus,
        normal=normal,
    )


@dataclass
class IfemLocalBasis:
    """Coefficients (a, b, c) of the three modified vertex functions on the
    plus and minus side of one cut triangle: value = a + b*x + c*y."""

    coef_plus: np.ndarray    # (3, 3) rows are basis index j
    coef_minus: np.ndarray
    beta_minus: float
    beta_plus: float

    def coef(self, side: int) -> np.ndarray:
        return self.coef_plus if side > 0 else self.coef_minus

    def value(self, j: int, side: int, x, y):
        a, b, c = self.coef(side)[j]
        return a + b * np.asarray(x) + c * np.asarray(y)

    def grad(self, j: int, side: int) -> np.ndarray:
        return self.coef(side)[j, 1:]


def build_local_basis(tri: np.ndarray, cut: CutElement, beta_minus: float,
                      beta_plus: float) -> IfemLocalBasis:
    """Solve the 6x6 system (3 nodal + 2 continuity + 1 flux conditions)."""
    if beta_minus <= 0 or beta_plus <= 0:
        raise ValueError("beta values must be positive")
    tri = np.asarray(tri, dtype=float)
    sides = cut.side_of(tri[:, 0], tri[:, 1])

    # unknowns ordered (a+, b+, c+, a-, b-, c-)
    m = np.zeros((6, 6))
    for i in range(3):
        row = np.array([1.0, tri[i, 0], tri[i, 1]])
        if sides[i] > 0:
            m[i, 0:3] = row
        else:
            m[i, 3:6] = row
    for r, pt in ((3, cut.segment.e1), (4, cut.segment.e2)):
        row = np.array([1.0, pt[0], pt[1]])
        m[r, 0:3] = row
        m[r, 3:6] = -row
    nx, ny = cut.normal
    m[5, 1:3] = [beta_plus * nx, beta_plus * ny]
    m[5, 4:6] = [-beta_minus * nx, -beta_minus * ny]

    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > BASIS_COND_LIMIT:
        raise SingularBasisSystem(f"local basis system condition {cond:.3e}")

    rhs = np.zeros((6, 3))
    rhs[0:3, 0:3] = np.eye(3)
    try:
        sol = linalg.DenseSolver(m).solve(rhs)
    except linalg.SingularMatrix as exc:
        raise SingularBasisSystem(str(exc)) from exc
    return IfemLocalBasis(
        coef_plus=sol[0:3, :].T.copy(),
        coef_minus=sol[3:6, :].T.copy(),
        beta_minus=beta_minus,
        beta_plus=beta_plus,
    )


@dataclass
class EnrichedSpace:
    """DOF layout and per-element basis data for the enriched space.

    Coefficient vectors are 'full': one entry per mesh vertex (boundary
    entries hold Dirichlet values) followed by one constant per element.
    The linear system is solved on the free subset: interior vertices
    first (in ascending vertex order), then all element constants.
    """

    mesh: StructuredMesh
    classification: MeshClassification
    beta_minus: float
    beta_plus: float
    cut_elements: Dict[int, CutElement]
    local_bases: Dict[int, IfemLocalBasis]
    grad_nodal: np.ndarray        # (nt, 3, 2) standard P1 gradients
    elem_area: np.ndarray
    elem_beta: np.ndarray         # one-sided elements: their beta; cut: nan
    elem_beta_max: np.ndarray     # max beta present in the element
    interior_vertices: np.ndarray
    free_dofs: np.ndarray         # indices into the full vector

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_elems(self) -> int:
        return self.mesh.n_elems

    @property
    def n_full(self) -> int:
        return self.n_vertices + self.n_elems

    @property
    def n_nodal_free(self) -> int:
        return int(self.interior_vertices.size)

    def const_dof(self, t: int) -> int:
        return self.n_vertices + t

    def side_at(self, t: int, x, y):
        """Element-local side: the straight-cut side on interface elements."""
        if t in self.cut_elements:
            return self.cut_elements[t].side_of(x, y)
        return self.classification.elem_side[t]

    def beta_of_side(self, side) -> np.ndarray:
        return np.where(np.asarray(side) > 0, self.beta_plus, self.beta_minus)


def build_space(mesh: StructuredMesh, cls: MeshClassification, beta_minus: float,
                beta_plus: float) -> EnrichedSpace:
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    grad = np.empty((mesh.n_elems, 3, 2))
    # rotate opposite edges by 90 degrees: grad lambda_i = perp(p_{i+2}-p_{i+1}) / 2A
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grad[:, i, 0] = -e[:, 1] / area2
        grad[:, i, 1] = e[:, 0] / area2

    elem_beta = np.where(cls.elem_side > 0, beta_plus, beta_minus).astype(float)
    elem_beta_max = elem_beta.copy()

    cut_elements: Dict[int, CutElement] = {}
    local_bases: Dict[int, IfemLocalBasis] = {}
    for t in cls.interface_elems:
        t = int(t)
        kind = cls.kinds[t]
        tri = mesh.elem_coords(t)
        # provisional sides from the straight cut, oriented by the level set
        seg = kind.cut
        tangent = seg.e2 - seg.e1
        nrm = np.array([tangent[1], -tangent[0]])
        s_lin = (tri - seg.e1) @ nrm
        phi_v = cls.phi_vertices[mesh.triangles[t]]
        # align linear side sign with phi sign at the most clearly cut vertex
        ref = int(np.argmax(np.abs(phi_v)))
        if s_lin[ref] * phi_v[ref] < 0:
            nrm = -nrm
            s_lin = -s_lin
        vertex_sides = np.where(s_lin >= 0.0, 1, -1)
        cut = build_cut_element(tri, seg, vertex_sides, elem=t)
        cut_elements[t] = cut
        local_bases[t] = build_local_basis(tri, cut, beta_minus, beta_plus)
        elem_beta[t] = np.nan
        elem_beta_max[t] = max(beta_minus, beta_plus)

    interior = np.flatnonzero(~mesh.boundary_vertex)
    free = np.concatenate([interior, mesh.n_vertices + np.arange(mesh.n_elems)])

    return EnrichedSpace(
        mesh=mesh,
        classification=cls,
        beta_minus=beta_minus,
        beta_plus=beta_plus,
        cut_elements=cut_elements,
        local_bases=local_bases,
        grad_nodal=grad,
        elem_area=0.5 * area2,
        elem_beta=elem_beta,
        elem_beta_max=elem_beta_max,
        interior_vertices=interior,
        free_dofs=free,
    )


# ---------------------------------------------------------------------------
# evaluation


def _bary(space: EnrichedSpace, t: int, x, y) -> np.ndarray:
    tri = space.mesh.elem_coords(t)
    g = space.grad_nodal[t]
    cx, cy = tri.mean(axis=0)
    x = np.asarray(x, dtype=float)
    return np.stack(
        [1.0 / 3.0 + g[i, 0] * (x - cx) + g[i, 1] * (np.asarray(y) - cy) for i in range(3)],
        axis=-1,
    )


def basis_value(space: EnrichedSpace, t: int, j: int, x, y, tol: float = 1e-10):
    """Value of local nodal basis j of element t; j = 3 is the constant."""
    lam = _bary(space, t, x, y)
    if np.any(lam < -tol) or np.any(lam > 1 + tol):
        raise PointOutsideElement(f"point outside element {t}")
    if j == 3:
        return np.ones_like(np.asarray(x, dtype=float))
    if t in space.local_bases:
        side = space.cut_elements[t].side_of(x, y)
        basis = space.local_bases[t]
        vplus = basis.value(j, 1, x, y)
        vminus = basis.value(j, -1, x, y)
        return np.where(side > 0, vplus, vminus)
    return lam[..., j]


def basis_grad(space: EnrichedSpace, t: int, j: int, x, y, tol: float = 1e-10):
    lam = _bary(space, t, x, y)
    if np.any(lam < -tol) or np.any(lam > 1 + tol):
        raise PointOutsideElement(f"point outside element {t}")
    if j == 3:
        return np.zeros(np.asarray(x, dtype=float).shape + (2,))
    if t in space.local_bases:
        side = space.cut_elements[t].side_of(x, y)
        basis = space.local_bases[t]
        gp = basis.grad(j, 1)
        gm = basis.grad(j, -1)
        return np.where(np.asarray(side)[..., None] > 0, gp, gm)
    return np.broadcast_to(space.grad_nodal[t, j], np.asarray(x, dtype=float).shape + (2,)).copy()


def eval_solution(space: EnrichedSpace, coeffs: np.ndarray, t: int, x, y):
    """Evaluate a full-coefficient function on element t (nodal + constant)."""
    verts = space.mesh.triangles[t]
    c = coeffs[space.const_dof(t)]
    out = np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(c))
    for j in range(3):
        out = out + coeffs[verts[j]] * basis_value(space, t, j, x, y)
    return out


def eval_gradient(space: EnrichedSpace, coeffs: np.ndarray, t: int, x, y):
    verts = space.mesh.triangles[t]
    out = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape + (2,))
    for j in range(3):
        out = out + coeffs[verts[j]] * basis_grad(space, t, j, x, y)
    return out


# ---------------------------------------------------------------------------
# interpolation


def nodal_interpolant(space: EnrichedSpace, v: Callable,
                      include_boundary: bool = True) -> np.ndarray:
    """Vertex interpolation into the nodal part of a full vector."""
    coeffs = np.zeros(space.n_full)
    verts = space.mesh.vertices
    vals = np.asarray(v(verts[:, 0], verts[:, 1]), dtype=float)
    if include_boundary:
        coeffs[: space.n_vertices] = vals
    else:
        mask = ~space.mesh.boundary_vertex
        coeffs[: space.n_vertices][mask] = vals[mask]
    return coeffs


def enriched_interpolant(space: EnrichedSpace, v: Callable, degree: int = 4,
                         include_boundary: bool = True) -> np.ndarray:
    """Nodal interpolant plus per-element mean of the interpolation defect."""
    coeffs = nodal_interpolant(space, v, include_boundary=include_boundary)
    bary, w = triangle_rule(degree)
    for t in range(space.n_elems):
        if t in space.cut_elements:
            cut = space.cut_elements[t]
            num = 0.0
            den = 0.0
            for tris in (cut.tris_minus, cut.tris_plus):
                for sub in tris:
                    pts = triangle_points(sub, bary)
                    area = abs(
                        0.5
                        * (
                            (sub[1, 0] - sub[0, 0]) * (sub[2, 1] - sub[0, 1])
                            - (sub[1, 1] - sub[0, 1]) * (sub[2, 0] - sub[0, 0])
                        )
                    )
                    resid = np.asarray(v(pts[:, 0], pts[:, 1])) - _nodal_value(
                        space, coeffs, t, pts
                    )
                    num += area * float(np.dot(w, resid))
                    den += area
            coeffs[space.const_dof(t)] = num / den
        else:
            tri = space.mesh.elem_coords(t)
            pts = triangle_points(tri, bary)
            resid = np.asarray(v(pts[:, 0], pts[:, 1])) - _nodal_value(space, coeffs, t, pts)
            coeffs[space.const_dof(t)] = float(np.dot(w, resid))
    return coeffs


def _nodal_value(space: EnrichedSpace, coeffs: np.ndarray, t: int, pts: np.ndarray):
    verts = space.mesh.triangles[t]
    out = np.zeros(pts.shape[0])
    for j in range(3):
        out += coeffs[verts[j]] * np.asarray(
            basis_value(space, t, j, pts[:, 0], pts[:, 1])
        )
    return out
