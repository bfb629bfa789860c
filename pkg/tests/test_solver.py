"""Gauss-Seidel, AMG hierarchy, auxiliary-space preconditioner and PCG
tests."""
import numpy as np
import pytest
import scipy.sparse as sp

from eifem.solver import (
    AuxPreconditioner,
    IndefinitePreconditioner,
    NotConverged,
    PrecondParams,
    aggregate,
    amg_setup,
    gs_sweep,
    interface_dof_mask,
    pcg,
    solve_system,
)


def _laplacian_1d(n: int) -> sp.csr_matrix:
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)).tocsr()


def _sweep(a, x, b, backward=False):
    gs_sweep(a, a.diagonal().copy(), x, b, backward=backward)


class TestGaussSeidel:
    def test_identity_solves_in_one_sweep(self, rng):
        a = sp.eye(5, format="csr")
        b = rng.standard_normal(5)
        x = np.zeros(5)
        _sweep(a, x, b)
        assert np.array_equal(x, b)

    def test_hand_iteration_2x2(self):
        a = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
        x = np.zeros(2)
        _sweep(a, x, np.array([1.0, 1.0]))
        assert np.allclose(x, [0.5, 0.25], atol=1e-15)

    def test_backward_order(self):
        a = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
        x = np.zeros(2)
        _sweep(a, x, np.array([1.0, 1.0]), backward=True)
        # backward visits row 1 first: x1 = 0.5, then x0 = (1 - 0.5)/2
        assert np.allclose(x, [0.25, 0.5], atol=1e-15)

    def test_residual_decreases_on_spd(self, rng):
        a = _laplacian_1d(50)
        b = rng.standard_normal(50)
        x = np.zeros(50)
        res = [np.linalg.norm(b)]
        for _ in range(5):
            _sweep(a, x, b)
            res.append(np.linalg.norm(b - a @ x))
        assert all(r1 <= r0 for r0, r1 in zip(res, res[1:]))


class TestAmg:
    def test_1d_laplacian_hierarchy(self):
        h = amg_setup(_laplacian_1d(256))
        assert h.n_levels >= 2
        sizes = [lv.a.shape[0] for lv in h.levels]
        assert all(s1 < s0 for s0, s1 in zip(sizes, sizes[1:]))
        assert sizes[-1] <= 64

    def test_galerkin_identity(self):
        h = amg_setup(_laplacian_1d(256))
        for lv, nxt in zip(h.levels, h.levels[1:]):
            coarse = (lv.p.T @ lv.a @ lv.p).toarray()
            diff = np.abs(coarse - nxt.a.toarray()).max()
            assert diff <= 1e-12 * np.abs(coarse).max()

    def test_small_matrix_single_level(self):
        h = amg_setup(_laplacian_1d(32))
        assert h.n_levels == 1
        assert h.levels[0].coarse is not None

    def test_single_level_exact(self, rng):
        a = _laplacian_1d(32)
        h = amg_setup(a)
        r = rng.standard_normal(32)
        x = h.vcycle(r)
        assert np.linalg.norm(a @ x - r) <= 1e-12 * np.linalg.norm(r)

    def test_vcycle_zero_input(self):
        h = amg_setup(_laplacian_1d(256))
        assert np.all(h.vcycle(np.zeros(256)) == 0.0)

    def test_vcycle_linearity(self, rng):
        h = amg_setup(_laplacian_1d(256))
        r1 = rng.standard_normal(256)
        r2 = rng.standard_normal(256)
        lhs = h.vcycle(2.5 * r1 + r2)
        rhs = 2.5 * h.vcycle(r1) + h.vcycle(r2)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))

    def test_identity_aggregates_are_singletons(self):
        a = sp.eye(100, format="csr")
        agg = aggregate(a)
        assert np.array_equal(np.sort(np.unique(agg)), np.arange(100))

    def test_keep_rows_stay_singletons(self):
        a = _laplacian_1d(12)
        keep = np.zeros(12, dtype=bool)
        keep[[3, 7]] = True
        agg = aggregate(a, keep=keep)
        n_regular = agg.max() - 1
        for i in (3, 7):
            assert np.sum(agg == agg[i]) == 1
            assert agg[i] >= n_regular

    def test_a22_vcycle_contracts(self, make_case, rng):
        _, _, _, _, system = make_case(32, 1.0, 100.0)
        a22 = system.block(2, 2)
        h = amg_setup(a22)
        x = rng.standard_normal(a22.shape[0])
        b = np.zeros_like(x)
        norms = [np.linalg.norm(a22 @ x - b)]
        for _ in range(10):
            x += h.vcycle(b - a22 @ x)
            norms.append(np.linalg.norm(a22 @ x - b))
        factor = (norms[-1] / norms[0]) ** (1.0 / 10.0)
        assert factor < 0.7


class TestPcg:
    def test_identity_one_iteration(self, rng):
        a = sp.eye(10, format="csr")
        b = rng.standard_normal(10)
        x, stats = pcg(a, b)
        assert stats.iterations <= 1
        assert np.allclose(x, b, atol=1e-12)

    def test_hand_2x2(self):
        a = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
        x, stats = pcg(a, np.array([1.0, 0.0]), rtol=1e-12)
        assert stats.iterations <= 2
        assert np.allclose(x, [2.0 / 3.0, -1.0 / 3.0], atol=1e-12)

    def test_zero_rhs(self):
        x, stats = pcg(_laplacian_1d(8), np.zeros(8))
        assert stats.iterations == 0
        assert np.all(x == 0.0)

    def test_not_converged_carries_state(self, rng):
        a = _laplacian_1d(100)
        b = rng.standard_normal(100)
        with pytest.raises(NotConverged) as err:
            pcg(a, b, rtol=1e-14, maxiter=3)
        assert err.value.iterations == 3
        assert err.value.residual > 0

    def test_indefinite_preconditioner_detected(self, rng):
        a = _laplacian_1d(10)
        b = rng.standard_normal(10)
        with pytest.raises(IndefinitePreconditioner):
            pcg(a, b, precond=lambda r: -r)

    def test_flexible_variant_converges(self, make_case):
        _, _, _, _, system = make_case(8, 1.0, 100.0)
        pre = AuxPreconditioner(system.matrix, system.n_nodal)
        x, stats = pcg(system.matrix, system.rhs, precond=pre.apply,
                       rtol=1e-8, flexible=True)
        assert stats.converged
        res = np.linalg.norm(system.rhs - system.matrix @ x)
        assert res <= 1e-8 * np.linalg.norm(system.rhs)


class TestAuxPreconditioner:
    def test_zero_maps_to_zero(self, make_case):
        _, _, _, _, system = make_case(8, 1.0, 10.0)
        pre = AuxPreconditioner(system.matrix, system.n_nodal)
        assert np.all(pre.apply(np.zeros(system.n_free)) == 0.0)

    def test_symmetry(self, make_case, rng):
        _, _, _, space, system = make_case(32, 1.0, 100.0)
        pre = AuxPreconditioner(system.matrix, system.n_nodal,
                                keep_nodal=interface_dof_mask(space))
        for _ in range(5):
            x = rng.standard_normal(system.n_free)
            y = rng.standard_normal(system.n_free)
            bxy = float((pre.apply(x)) @ y)
            xby = float(x @ pre.apply(y))
            assert abs(bxy - xby) <= 1e-10 * max(abs(bxy), abs(xby))

    def test_block_diagonal_exact_reduction(self, rng):
        # N_GS = 0 with single-level (dense) hierarchies on a block-diagonal
        # matrix returns the exact block solves
        a1 = _laplacian_1d(20)
        a2 = (_laplacian_1d(15) + sp.eye(15)).tocsr()
        a = sp.block_diag([a1, a2], format="csr")
        pre = AuxPreconditioner(a, 20, PrecondParams(n_gs=0, amg_cycles=1))
        assert pre.hier_nodal.n_levels == 1
        assert pre.hier_const.n_levels == 1
        r = rng.standard_normal(35)
        z = pre.apply(r)
        assert np.linalg.norm(a @ z - r) <= 1e-10 * np.linalg.norm(r)

    def test_exact_preconditioner_few_iterations(self, make_case, rng):
        import scipy.sparse.linalg as spla

        _, _, _, _, system = make_case(8, 1.0, 1000.0)
        lu = spla.splu(system.matrix.tocsc())
        x, stats = pcg(system.matrix, system.rhs, precond=lu.solve, rtol=1e-7)
        assert stats.iterations <= 3

    def test_nonpositive_diagonal_rejected(self):
        a = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(IndefinitePreconditioner):
            AuxPreconditioner(a, 1)


class TestSolveSystem:
    def test_benchmark_solves(self, make_case):
        _, _, _, _, system = make_case(32, 1.0, 100.0)
        x, stats = solve_system(system)
        assert stats.converged
        assert stats.iterations <= 15
        res = np.linalg.norm(system.rhs - system.matrix @ x)
        assert res <= 1e-7 * np.linalg.norm(system.rhs)

    def test_interface_mask_matches_band(self, make_case):
        _, mesh, cls, space, _ = make_case(16, 1.0, 100.0)
        mask = interface_dof_mask(space)
        assert mask.shape == (space.n_nodal_free,)
        flagged = set(space.interior_vertices[mask])
        band = set(mesh.triangles[cls.interface_elems].ravel())
        assert flagged == band & set(space.interior_vertices)
