"""PCG with an auxiliary-space preconditioner for the enriched system.

One preconditioner application runs a few forward Gauss-Seidel sweeps on
the full matrix, corrects the residual additively with aggregation-AMG
cycles on the nodal and constant diagonal blocks, and closes with the same
number of backward sweeps.  Every inner component runs a fixed number of
sweeps/cycles, so the preconditioner is a fixed symmetric linear operator
and plain CG applies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from . import linalg

STRENGTH_THETA = 0.25
JACOBI_OMEGA = 2.0 / 3.0
COARSE_SIZE = 64
MAX_LEVELS = 20

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


class SolverError(Exception):
    pass


class NotConverged(SolverError):
    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class IndefinitePreconditioner(SolverError):
    pass


# ---------------------------------------------------------------------------
# Gauss-Seidel sweeps on CSR


@njit(cache=True)
def _gs_forward_kernel(indptr, indices, data, diag, x, b):
    n = x.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                s -= data[k] * x[j]
        x[i] = s / diag[i]


@njit(cache=True)
def _gs_backward_kernel(indptr, indices, data, diag, x, b):
    n = x.shape[0]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                s -= data[k] * x[j]
        x[i] = s / diag[i]


def gs_sweep(a: sp.csr_matrix, diag: np.ndarray, x: np.ndarray, b: np.ndarray,
             backward: bool = False) -> None:
    """One in-place Gauss-Seidel sweep for a x = b."""
    kernel = _gs_backward_kernel if backward else _gs_forward_kernel
    kernel(a.indptr, a.indices, a.data, diag, x, b)


# ---------------------------------------------------------------------------
# plain aggregation


@njit(cache=True)
def _aggregate_kernel(indptr, indices, strong, n):
    agg = -np.ones(n, dtype=np.int64)
    count = 0
    # pass 1: seed aggregates from fully unaggregated strong neighborhoods
    for i in range(n):
        if agg[i] >= 0:
            continue
        free = True
        has_strong = False
        for k in range(indptr[i], indptr[i + 1]):
            if strong[k] and indices[k] != i:
                has_strong = True
                if agg[indices[k]] >= 0:
                    free = False
                    break
        if free and has_strong:
            agg[i] = count
            for k in range(indptr[i], indptr[i + 1]):
                if strong[k] and indices[k] != i:
                    agg[indices[k]] = count
            count += 1
    # pass 2: attach leftovers to a neighboring aggregate
    for i in range(n):
        if agg[i] >= 0:
            continue
        best = -1
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if strong[k] and j != i and agg[j] >= 0:
                best = agg[j]
                break
        if best >= 0:
            agg[i] = best
    # pass 3: whatever is left becomes singleton (or strong-pair) aggregates
    for i in range(n):
        if agg[i] >= 0:
            continue
        agg[i] = count
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if strong[k] and j != i and agg[j] < 0:
                agg[j] = count
        count += 1
    return agg, count


def aggregate(a: sp.csr_matrix, theta: float = STRENGTH_THETA,
              keep: Optional[np.ndarray] = None) -> np.ndarray:
    """Aggregate index per row, using the symmetric strength test
    |a_ij| >= theta sqrt(a_ii a_jj).

    Nodes flagged in `keep` become singleton aggregates, numbered after the
    regular ones; low-energy oscillatory modes pinned to such nodes then
    survive into the coarse space instead of being averaged away.
    """
    n = a.shape[0]
    d = np.abs(a.diagonal())
    rows = np.repeat(np.arange(n), np.diff(a.indptr))
    strong = np.abs(a.data) >= theta * np.sqrt(d[rows] * d[a.indices])
    agg, _ = _aggregate_kernel(a.indptr, a.indices, strong, n)
    if keep is None or not np.any(keep):
        return agg
    agg[keep] = -1
    used = np.unique(agg[agg >= 0])
    remap = np.zeros(int(agg.max()) + 2 if agg.max() >= 0 else 1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    agg[agg >= 0] = remap[agg[agg >= 0]]
    agg[keep] = used.size + np.arange(int(np.sum(keep)))
    return agg


@dataclass
class AmgLevel:
    a: sp.csr_matrix
    diag: np.ndarray
    p: Optional[sp.csr_matrix] = None
    coarse: Optional[linalg.DenseSolver] = None


@dataclass
class AmgHierarchy:
    levels: List[AmgLevel]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def vcycle(self, b: np.ndarray, level: int = 0) -> np.ndarray:
        lv = self.levels[level]
        if lv.coarse is not None:
            return lv.coarse.solve(b)
        x = np.zeros_like(b)
        gs_sweep(lv.a, lv.diag, x, b, backward=False)
        r = b - lv.a @ x
        x += lv.p @ self.vcycle(lv.p.T @ r, level + 1)
        gs_sweep(lv.a, lv.diag, x, b, backward=True)
        return x

    def apply(self, r: np.ndarray, cycles: int) -> np.ndarray:
        """Fixed number of V-cycles on a x = r from a zero start."""
        x = self.vcycle(r)
        for _ in range(cycles - 1):
            x += self.vcycle(r - self.levels[0].a @ x)
        return x


def amg_setup(a: sp.csr_matrix, keep: Optional[np.ndarray] = None) -> AmgHierarchy:
    """Smoothed-aggregation hierarchy with piecewise-constant tentative
    prolongation and one weighted-Jacobi smoothing step.

    `keep` marks rows whose error components aggregation cannot represent
    (interface-adjacent nodal functions under strong coefficient
    contrast); they ride through every level as singletons and are
    resolved exactly by the dense coarsest solve.
    """
    levels: List[AmgLevel] = []
    a = a.tocsr()
    n_keep = int(np.sum(keep)) if keep is not None else 0
    while a.shape[0] - n_keep > COARSE_SIZE and len(levels) < MAX_LEVELS - 1:
        n = a.shape[0]
        # Galerkin operators lose relative off-diagonal weight with depth,
        # so the strength threshold decays per level; if a level still
        # refuses to coarsen, fall back to the full connectivity graph
        agg = aggregate(a, STRENGTH_THETA * 0.5 ** len(levels), keep)
        nc = int(agg.max()) + 1
        if nc >= n:
            agg = aggregate(a, 0.0, keep)
            nc = int(agg.max()) + 1
        if nc >= n or nc == 0:
            break
        tent = sp.csr_matrix(
            (np.ones(n), (np.arange(n), agg)), shape=(n, nc)
        )
        dinv = 1.0 / a.diagonal()
        p = (tent - JACOBI_OMEGA * sp.diags(dinv) @ (a @ tent)).tocsr()
        levels.append(AmgLevel(a=a, diag=a.diagonal().copy(), p=p))
        a = (p.T @ a @ p).tocsr()
        a.sort_indices()
        if n_keep:
            new_keep = np.zeros(a.shape[0], dtype=bool)
            new_keep[nc - n_keep:] = True
            keep = new_keep
    levels.append(
        AmgLevel(a=a, diag=a.diagonal().copy(), coarse=linalg.DenseSolver(a.toarray()))
    )
    return AmgHierarchy(levels=levels)


# ---------------------------------------------------------------------------
# auxiliary-space preconditioner


@dataclass
class PrecondParams:
    n_gs: int = 1
    amg_cycles: int = 5


class AuxPreconditioner:
    """Symmetric preconditioner: forward sweeps on the full matrix, block
    AMG correction of the residual, backward sweeps."""

    def __init__(self, a: sp.csr_matrix, n_nodal: int,
                 params: PrecondParams = PrecondParams(),
                 keep_nodal: Optional[np.ndarray] = None):
        self.a = a.tocsr()
        self.a.sort_indices()
        self.diag = self.a.diagonal().copy()
        if np.any(self.diag <= 0):
            raise IndefinitePreconditioner("nonpositive diagonal entry")
        self.n_nodal = n_nodal
        self.params = params
        self.hier_nodal = amg_setup(a[:n_nodal, :n_nodal].tocsr(), keep=keep_nodal)
        self.hier_const = amg_setup(a[n_nodal:, n_nodal:].tocsr())

    def apply(self, r: np.ndarray) -> np.ndarray:
        p = self.params
        x = np.zeros_like(r)
        for _ in range(p.n_gs):
            gs_sweep(self.a, self.diag, x, r, backward=False)
        res = r - self.a @ x if p.n_gs else r.copy()
        n1 = self.n_nodal
        x[:n1] += self.hier_nodal.apply(res[:n1], p.amg_cycles)
        x[n1:] += self.hier_const.apply(res[n1:], p.amg_cycles)
        for _ in range(p.n_gs):
            gs_sweep(self.a, self.diag, x, r, backward=True)
        return x


# ---------------------------------------------------------------------------
# PCG


@dataclass
class SolveStats:
    iterations: int
    residuals: List[float]
    converged: bool
    rtol: float

    def to_rows(self):
        return [(k, res) for k, res in enumerate(self.residuals)]


def pcg(a: sp.csr_matrix, b: np.ndarray, precond: Optional[Callable] = None,
        rtol: float = 1e-7, maxiter: int = 500, x0: Optional[np.ndarray] = None,
        flexible: bool = False):
    """Preconditioned conjugate gradients on the true residual norm.

    Returns (x, SolveStats); raises NotConverged past maxiter and
    IndefinitePreconditioner when the preconditioned inner product turns
    nonpositive.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).copy()
    apply_m = precond if precond is not None else (lambda v: v)

    r = b - a @ x if x.any() else b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, SolveStats(0, [0.0], True, rtol)
    residuals = [float(np.linalg.norm(r)) / bnorm]
    if residuals[0] <= rtol:
        return x, SolveStats(0, residuals, True, rtol)

    z = apply_m(r)
    rz = float(r @ z)
    if rz <= 0.0:
        raise IndefinitePreconditioner(f"r.z = {rz:.3e} at start")
    p = z.copy()
    r_prev = r.copy() if flexible else None

    for k in range(1, maxiter + 1):
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise IndefinitePreconditioner(f"p.Ap = {pap:.3e} at iteration {k}")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = float(np.linalg.norm(r)) / bnorm
        residuals.append(res)
        if res <= rtol:
            return x, SolveStats(k, residuals, True, rtol)
        z = apply_m(r)
        if flexible:
            rz_new = float((r - r_prev) @ z)
            r_prev = r.copy()
        else:
            rz_new = float(r @ z)
        denom = float(r @ z)
        if denom <= 0.0:
            raise IndefinitePreconditioner(f"r.z = {denom:.3e} at iteration {k}")
        beta = rz_new / rz
        rz = denom
        p = z + beta * p

    raise NotConverged(
        f"PCG did not reach rtol={rtol:g} in {maxiter} iterations",
        maxiter,
        residuals[-1],
    )


def interface_dof_mask(space) -> np.ndarray:
    """Free nodal dofs belonging to a vertex of an interface element."""
    mesh = space.mesh
    flag = np.zeros(mesh.n_vertices, dtype=bool)
    cut = space.classification.interface_elems
    if cut.size:
        flag[mesh.triangles[cut].ravel()] = True
    return flag[space.interior_vertices]


def solve_system(system, precond_params: PrecondParams = PrecondParams(),
                 rtol: float = 1e-7, maxiter: int = 500):
    """Convenience wrapper: build the preconditioner and run PCG."""
    pre = AuxPreconditioner(system.matrix, system.n_nodal, precond_params,
                            keep_nodal=interface_dof_mask(system.space))
    return pcg(system.matrix, system.rhs, precond=pre.apply, rtol=rtol,
               maxiter=maxiter)
