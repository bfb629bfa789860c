"""Triangle and segment quadrature tests against analytic integrals."""
import numpy as np

from eifem.quadrature import (
    gauss_unit,
    quad_segment,
    quad_triangle,
    triangle_rule,
)

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _monomial_exact(a: int, b: int) -> float:
    """Integral of x^a y^b over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)


class TestTriangleRule:
    def test_weights_sum_to_one(self):
        for degree in (2, 4, 6, 8):
            _, w = triangle_rule(degree)
            assert abs(w.sum() - 1.0) <= 1e-14

    def test_constant(self):
        tri = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 3.0]])
        assert abs(quad_triangle(tri, lambda x, y: np.ones_like(x)) - 3.0) <= 1e-14

    def test_quadratic_midpoint_rule(self):
        val = quad_triangle(REF, lambda x, y: x**2, degree=2)
        assert abs(val - 1.0 / 12.0) <= 1e-14

    def test_degree_exactness(self):
        for degree in (4, 6):
            for a in range(degree + 1):
                for b in range(degree + 1 - a):
                    val = quad_triangle(REF, lambda x, y: x**a * y**b, degree=degree)
                    assert abs(val - _monomial_exact(a, b)) <= 1e-13


class TestSegmentRule:
    def test_gauss_unit_weights(self):
        for npts in (2, 3, 4):
            x, w = gauss_unit(npts)
            assert abs(w.sum() - 1.0) <= 1e-14
            assert np.all((x > 0) & (x < 1))

    def test_length(self):
        val = quad_segment(np.array([0.0, 0.0]), np.array([3.0, 4.0]),
                           lambda x, y: np.ones_like(x))
        assert abs(val - 5.0) <= 1e-14

    def test_cubic_exact_two_points(self):
        # s(1-s) along a unit segment integrates to 1/6
        a, b = np.array([0.0, 0.0]), np.array([1.0, 0.0])
        val = quad_segment(a, b, lambda x, y: x * (1.0 - x), npts=2)
        assert abs(val - 1.0 / 6.0) <= 1e-15

    def test_split_piecewise_constant(self):
        a, m, b = np.array([0.0, 0.0]), np.array([0.3, 0.0]), np.array([1.0, 0.0])
        c1, c2 = 2.0, -5.0
        val = quad_segment(a, m, lambda x, y: np.full_like(x, c1)) \
            + quad_segment(m, b, lambda x, y: np.full_like(x, c2))
        assert abs(val - (c1 * 0.3 + c2 * 0.7)) <= 1e-14
