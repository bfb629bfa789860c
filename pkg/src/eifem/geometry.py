"""Level-set interface geometry: point/element classification and edge cuts.

The interface is the zero set of a scalar level-set function; negative
values mark the inner region, positive values the outer one.  Inside a cut
triangle the interface is replaced by the straight segment joining the two
edge intersection points, consistent with the piecewise-linear modified
basis built on top of it.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

ROOT_TOL = 1e-12   # absolute tolerance on |phi| at a computed intersection
SNAP_REL = 1e-9    # vertex snapping tolerance, relative to h


class GeometryError(Exception):
    pass


class NoSignChange(GeometryError):
    """Requested an edge/interface intersection on a non-crossing segment."""


class DegenerateCut(GeometryError):
    """The interface crosses one element more than twice; h is too coarse."""


class Side(Enum):
    MINUS = -1
    ON_INTERFACE = 0
    PLUS = 1


@dataclass(frozen=True)
class LevelSet:
    """Scalar level-set with gradient; evaluators must accept numpy arrays."""

    phi: Callable
    grad: Callable
    tag: str = "levelset"

    def __call__(self, x, y):
        return self.phi(x, y)


def circle_level_set(radius: float, center: Tuple[float, float] = (0.0, 0.0)) -> LevelSet:
    """phi = (x-cx)^2 + (y-cy)^2 - r^2 (negative inside the circle)."""
    cx, cy = center

    def phi(x, y):
        return (x - cx) ** 2 + (y - cy) ** 2 - radius**2

    def grad(x, y):
        return np.stack([2.0 * (np.asarray(x) - cx), 2.0 * (np.asarray(y) - cy)], axis=-1)

    return LevelSet(phi, grad, tag=f"circle(r={radius},c=({cx},{cy}))")


def constant_level_set(value: float = 1.0) -> LevelSet:
    """Interface-free level set (everything on one side); handy in tests."""

    def phi(x, y):
        return np.full_like(np.asarray(x, dtype=float), value)

    def grad(x, y):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (2,))

    return LevelSet(phi, grad, tag=f"constant({value})")


@dataclass(frozen=True)
class CutSegment:
    """Straight interface approximation inside one triangle.

    e1 lies on local edge `edge1` of the parent triangle, e2 on `edge2`
    (local edge k joins vertices k and (k+1) mod 3).
    """

    e1: np.ndarray
    e2: np.ndarray
    edge1: int
    edge2: int


def classify_point(ls: LevelSet, p, tol: float = ROOT_TOL) -> Side:
    """Side of a single point, with a symmetric tolerance band around phi=0."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = float(ls.phi(p[0], p[1]))
    if v < -tol:
        return Side.MINUS
    if v > tol:
        return Side.PLUS
    return Side.ON_INTERFACE


def edge_intersection(ls: LevelSet, p1, p2) -> np.ndarray:
    """Intersection of segment p1-p2 with the interface.

    Bracketing root search (Brent: bisection with secant/inverse-quadratic
    refinement) on phi along the segment.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    f1 = float(ls.phi(p1[0], p1[1]))
    f2 = float(ls.phi(p2[0], p2[1]))
    if abs(f1) <= ROOT_TOL:
        return p1.copy()
    if abs(f2) <= ROOT_TOL:
        return p2.copy()
    if f1 * f2 > 0.0:
        raise NoSignChange("phi does not change sign along the segment")

    def g(t: float) -> float:
        q = p1 + t * (p2 - p1)
        return float(ls.phi(q[0], q[1]))

    t = brentq(g, 0.0, 1.0, xtol=1e-16, rtol=8.9e-16, maxiter=200)
    q = p1 + t * (p2 - p1)
    # polish with one secant step if the absolute tolerance is not yet met
    if abs(float(ls.phi(q[0], q[1]))) > ROOT_TOL:
        t2 = t + 1e-9
        g1, g2 = g(t), g(t2)
        if g2 != g1:
            t = t - g1 * (t2 - t) / (g2 - g1)
            q = p1 + t * (p2 - p1)
    return q


@dataclass(frozen=True)
class ElementKind:
    """Per-element classification: one-sided, or cut with a CutSegment."""

    side: Optional[Side] = None
    cut: Optional[CutSegment] = None

    @property
    def is_interface(self) -> bool:
        return self.cut is not None


def _polygon_area(pts) -> float:
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _effective_signs(phi_v: np.ndarray, snap_tol: float, centroid_phi: float) -> np.ndarray:
    """Vertex signs with near-zero values snapped to the element majority."""
    signs = np.where(phi_v > snap_tol, 1, np.where(phi_v < -snap_tol, -1, 0))
    if np.any(signs == 0):
        pos = int(np.sum(signs > 0))
        neg = int(np.sum(signs < 0))
        if pos > neg:
            fill = 1
        elif neg > pos:
            fill = -1
        else:
            fill = 1 if centroid_phi >= 0 else -1
        signs = np.where(signs == 0, fill, signs)
    return signs


def classify_element(ls: LevelSet, tri: np.ndarray, h: float) -> ElementKind:
    """Classify one triangle (rows are vertex coordinates) against the interface.

    Vertices with |phi| <= SNAP_REL*h take the side of the element majority;
    an intersection point landing within SNAP_REL*h of a vertex demotes the
    element to a non-interface one on the side of its larger sub-region.
    """
    tri = np.asarray(tri, dtype=float)
    phi_v = np.array([float(ls.phi(p[0], p[1])) for p in tri])
    centroid = tri.mean(axis=0)
    snap_tol = SNAP_REL * h
    signs = _effective_signs(phi_v, snap_tol, float(ls.phi(centroid[0], centroid[1])))

    if np.all(signs == signs[0]):
        return ElementKind(side=Side.PLUS if signs[0] > 0 else Side.MINUS)

    cut_edges = [k for k in range(3) if signs[k] * signs[(k + 1) % 3] < 0]
    if len(cut_edges) != 2:
        raise DegenerateCut(f"expected 2 cut edges, found {len(cut_edges)}")

    points = []
    for k in cut_edges:
        a, b = tri[k], tri[(k + 1) % 3]
        try:
            q = edge_intersection(ls, a, b)
        except NoSignChange:
            # snapped vertex disagreed with the raw phi sign: treat the cut
            # as passing through the closer endpoint
            q = a if abs(phi_v[k]) < abs(phi_v[(k + 1) % 3]) else b
        points.append(q)

    # snapping rule: a cut point essentially at a vertex means no real cut
    for q in points:
        if np.min(np.hypot(tri[:, 0] - q[0], tri[:, 1] - q[1])) <= snap_tol:
            area_minus = _side_area(tri, signs, points, cut_edges, -1)
            area_plus = _polygon_area(tri) - area_minus
            side = Side.PLUS if area_plus >= area_minus else Side.MINUS
            return ElementKind(side=side)

    return ElementKind(cut=CutSegment(points[0], points[1], cut_edges[0], cut_edges[1]))


def _side_area(tri, signs, points, cut_edges, which: int) -> float:
    """Area of the sub-region whose vertices carry sign `which`."""
    chain = []
    for k in range(3):
        chain.append((tri[k], signs[k]))
        if k in cut_edges:
            chain.append((points[cut_edges.index(k)], 0))
    poly = []
    n = len(chain)
    # walk the boundary chain; keep vertices of the requested side plus cuts
    for pt, s in chain:
        if s == which or s == 0:
            poly.append(pt)
    if len(poly) < 3:
        return 0.0
    return _polygon_area(np.array(poly))
