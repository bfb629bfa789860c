"""Sparse/dense kernel tests."""
import numpy as np
import pytest
import scipy.sparse as sp

from eifem import linalg


def _tridiag(n: int) -> sp.csr_matrix:
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)).tocsr()


class TestSpmv:
    def test_identity(self):
        a = sp.eye(5, format="csr")
        x = np.arange(5.0)
        assert np.array_equal(linalg.spmv(a, x), x)

    def test_tridiagonal_ones(self):
        y = linalg.spmv(_tridiag(6), np.ones(6))
        expect = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
        assert np.array_equal(y, expect)

    def test_dimension_mismatch(self):
        with pytest.raises(linalg.DimensionMismatch):
            linalg.spmv(sp.eye(4, format="csr"), np.ones(5))

    def test_matches_naive_triplets(self, rng):
        n = 40
        rows = rng.integers(0, n, size=200)
        cols = rng.integers(0, n, size=200)
        vals = rng.standard_normal(200)
        a = linalg.build_csr(rows, cols, vals, (n, n))
        x = rng.standard_normal(n)
        naive = np.zeros(n)
        for r, c, v in zip(rows, cols, vals):
            naive[r] += v * x[c]
        got = linalg.spmv(a, x)
        assert np.max(np.abs(got - naive)) <= 1e-14 * max(1.0, np.abs(naive).max())


class TestBuildCsr:
    def test_duplicates_sum(self):
        a = linalg.build_csr([0, 0, 1], [1, 1, 0], [2.0, 3.0, 1.0], (2, 2))
        assert a[0, 1] == 5.0
        assert a[1, 0] == 1.0

    def test_sorted_no_explicit_zeros(self):
        a = linalg.build_csr([0, 0], [1, 1], [1.0, -1.0], (2, 2))
        assert a.nnz == 0


class TestDenseSolve:
    def test_identity(self):
        b = np.array([3.0, -1.0])
        assert np.array_equal(linalg.dense_solve(np.eye(2), b), b)

    def test_two_by_two(self):
        x = linalg.dense_solve(np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([1.0, 0.0]))
        assert np.allclose(x, [2.0 / 3.0, -1.0 / 3.0], atol=1e-14)

    def test_zero_matrix_singular(self):
        with pytest.raises(linalg.SingularMatrix):
            linalg.dense_solve(np.zeros((3, 3)), np.ones(3))

    def test_nonsquare_rejected(self):
        with pytest.raises(linalg.DimensionMismatch):
            linalg.dense_solve(np.ones((2, 3)), np.ones(2))


class TestDenseSolver:
    def test_cached_factorization(self, rng):
        m = rng.standard_normal((6, 6)) + 6 * np.eye(6)
        solver = linalg.DenseSolver(m)
        b = rng.standard_normal(6)
        assert np.allclose(m @ solver.solve(b), b, atol=1e-10)

    def test_rhs_size_checked(self):
        solver = linalg.DenseSolver(np.eye(3))
        with pytest.raises(linalg.DimensionMismatch):
            solver.solve(np.ones(4))


class TestExtractBlock:
    def test_full_sets_identity(self):
        a = _tridiag(5)
        b = linalg.extract_block(a, np.arange(5), np.arange(5))
        assert (a != b).nnz == 0

    def test_empty_sets(self):
        b = linalg.extract_block(_tridiag(5), np.array([], dtype=int), np.array([], dtype=int))
        assert b.shape == (0, 0)

    def test_out_of_range(self):
        with pytest.raises(linalg.IndexOutOfRange):
            linalg.extract_block(_tridiag(5), np.array([7]), np.array([0]))

    def test_block_sizes_match_dof_split(self, make_case):
        _, _, _, space, system = make_case(8, 1.0, 10.0)
        n1 = system.n_nodal
        n = system.n_free
        a11 = linalg.extract_block(system.matrix, np.arange(n1), np.arange(n1))
        a22 = linalg.extract_block(system.matrix, np.arange(n1, n), np.arange(n1, n))
        assert a11.shape == (space.n_nodal_free, space.n_nodal_free)
        assert a22.shape == (space.n_elems, space.n_elems)


class TestIo:
    def test_matrix_market_roundtrip(self, tmp_path):
        a = _tridiag(5)
        path = tmp_path / "a.mtx"
        linalg.write_matrix_market(path, a)
        b = linalg.read_matrix_market(path)
        assert (a != b).nnz == 0

    def test_vector_roundtrip(self, tmp_path):
        v = np.array([1.0, -2.5, 3e-8])
        path = tmp_path / "v.txt"
        linalg.write_vector(path, v)
        assert np.allclose(linalg.read_vector(path), v, rtol=0, atol=0)
