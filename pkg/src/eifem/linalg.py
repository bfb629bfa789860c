"""Sparse/dense kernels shared by assembly and the iterative solver.

Thin wrappers over scipy.sparse and numpy.linalg that pin down the CSR
conventions (sorted, deduplicated columns, no explicit zeros) the rest of
the package relies on.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.io

DROP_TOL = 1e-300
PIVOT_TOL = 1e-300


class LinalgError(Exception):
    pass


class DimensionMismatch(LinalgError):
    pass


class SingularMatrix(LinalgError):
    pass


class IndexOutOfRange(LinalgError):
    pass


def build_csr(rows, cols, vals, shape) -> sp.csr_matrix:
    """Assemble a CSR matrix from coordinate triplets; duplicates sum."""
    a = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    a.data[np.abs(a.data) < DROP_TOL] = 0.0
    a.eliminate_zeros()
    return a


def spmv(a: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if a.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"matrix is {a.shape}, vector has {x.shape[0]} entries")
    return a @ x


def dense_solve(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a small dense system with a singularity guard."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"matrix is not square: {m.shape}")
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1.0 / PIVOT_TOL:
        raise SingularMatrix(f"condition estimate {cond:.3e}")
    return np.linalg.solve(m, np.asarray(b, dtype=float))


class DenseSolver:
    """Cached LU factorization for small dense systems (local basis solves,
    AMG coarsest level)."""

    def __init__(self, m: np.ndarray):
        import scipy.linalg

        m = np.asarray(m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"matrix is not square: {m.shape}")
        self.n = m.shape[0]
        self.cond = float(np.linalg.cond(m)) if self.n else 0.0
        self._lu = scipy.linalg.lu_factor(m)
        pivots = np.abs(np.diag(self._lu[0]))
        if self.n and pivots.min() < PIVOT_TOL:
            raise SingularMatrix(f"pivot {pivots.min():.3e} below tolerance")

    def solve(self, b: np.ndarray) -> np.ndarray:
        import scipy.linalg

        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has {b.shape[0]} entries, need {self.n}")
        return scipy.linalg.lu_solve(self._lu, b)


def extract_block(a: sp.csr_matrix, rows, cols) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n, m = a.shape
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        raise IndexOutOfRange("row index set out of range")
    if cols.size and (cols.min() < 0 or cols.max() >= m):
        raise IndexOutOfRange("column index set out of range")
    return a[rows][:, cols].tocsr()


def write_matrix_market(path, a) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(a))


def read_matrix_market(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))


def write_vector(path, v) -> None:
    np.savetxt(str(path), np.asarray(v, dtype=float).ravel(), fmt="%.17g")


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(str(path), dtype=float))
