"""Quadrature rules on triangles and segments.

Volume rules: the 3-point edge-midpoint rule (exact for quadratics) is the
workhorse for assembly; arbitrary-degree rules for error integration are
built by collapsing a tensor Gauss-Legendre grid onto the triangle.
"""
from __future__ import annotations

import numpy as np

# Edge-midpoint rule on the reference triangle, exact through degree 2.
_MIDPOINT_BARY = np.array(
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
)
_MIDPOINT_WEIGHTS = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])


def gauss_unit(npts: int):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(degree: int):
    """Barycentric points and weights (summing to 1) exact to `degree`."""
    if degree <= 2:
        return _MIDPOINT_BARY, _MIDPOINT_WEIGHTS
    # Collapsed-square rule: x = u, y = v*(1-u), jacobian (1-u).
    n = (degree + 3) // 2
    u, wu = gauss_unit(n)
    v, wv = gauss_unit(n)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv) * (1.0 - uu)
    x = uu.ravel()
    y = (vv * (1.0 - uu)).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    w = 2.0 * ww.ravel()  # normalize: reference triangle area is 1/2
    return bary, w


def triangle_points(tri: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Physical quadrature points for one triangle (3, 2)."""
    return bary @ tri


def triangle_area(tri: np.ndarray) -> float:
    d1 = tri[1] - tri[0]
    d2 = tri[2] - tri[0]
    return 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])


def quad_triangle(tri: np.ndarray, fn, degree: int = 2) -> float:
    """Integrate fn(x, y) over a straight triangle."""
    bary, w = triangle_rule(degree)
    pts = triangle_points(tri, bary)
    vals = fn(pts[:, 0], pts[:, 1])
    return abs(triangle_area(tri)) * float(np.dot(w, vals))


def quad_segment(p1: np.ndarray, p2: np.ndarray, fn, npts: int = 2) -> float:
    """Integrate fn(x, y) along the segment p1-p2 (2-pt Gauss: exact cubics)."""
    s, w = gauss_unit(npts)
    pts = p1[None, :] + s[:, None] * (p2 - p1)[None, :]
    length = float(np.hypot(*(p2 - p1)))
    return length * float(np.dot(w, fn(pts[:, 0], pts[:, 1])))
