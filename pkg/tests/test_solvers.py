import numpy as np
import pytest

from wpkrylov.solvers import (
    LinearSystem,
    SolveConfig,
    gmres_arnoldi_oracle,
    whp_gcr,
    whp_gcr_alt_a,
    whp_gcr_alt_b,
    wp_gcr_left,
    wp_gcr_restarted,
    wp_gcr_right,
    wp_mr,
    wp_orthomin,
)
from wpkrylov.weighting import (
    NotHermitianPreconditionerError,
    PreconditionerHandle,
    WeightOperator,
)

from conftest import make_pd_system, make_spd


def identity_setup(n=4):
    return (
        PreconditionerHandle.identity(n),
        WeightOperator.identity(n),
        SolveConfig(),
    )


def dense_setup(a, h_dense, w_dense=None, **cfg_kw):
    n = a.shape[0]
    h = PreconditionerHandle.from_dense(h_dense, hermitian_flag=True)
    w = WeightOperator.from_dense(w_dense if w_dense is not None else h_dense)
    return h, w, SolveConfig(**cfg_kw)


def krylov_ls_residuals(a, h_dense, w_dense, b, n_steps):
    """Independent oracle: explicit Krylov basis + dense least squares (QR)
    for min ||b - A x||_W over x in the span, x0 = 0."""
    lw = np.linalg.cholesky(w_dense)
    r0 = b.copy()
    res = [np.linalg.norm(lw.T @ r0)]
    v = h_dense @ r0
    cols = []
    for _ in range(n_steps):
        cols.append(v)
        img = lw.T @ (a @ np.column_stack(cols))
        q, _ = np.linalg.qr(img)
        rw = lw.T @ r0
        res.append(float(np.linalg.norm(rw - q @ (q.T @ rw))))
        v = h_dense @ (a @ v)
    return res


def assert_sequences_close(got, expected, rtol=1e-9):
    """Pointwise relative agreement, treating values at the round-off floor
    (below 1e-12 of the initial residual) as equal zeros."""
    floor = 1e-12 * max(got[0], expected[0])
    for x, y in zip(got, expected):
        if max(x, y) <= floor:
            continue
        assert abs(x - y) <= rtol * max(x, y)


class TestRightGcr:
    def test_identity_one_iteration(self):
        h, w, cfg = identity_setup(5)
        b = np.array([1.0, -2.0, 0.5, 3.0, 1.0])
        res = wp_gcr_right(LinearSystem(np.eye(5), b), h, w, cfg)
        assert res.status == "converged"
        assert res.iterations == 1
        assert res.trace.residual_norm_weighted[-1] <= 1e-14

    def test_skew_breakdown_at_zero(self):
        a = np.array([[0.0, 1.0], [-1.0, 0.0]])
        h, w, cfg = identity_setup(2)
        res = wp_gcr_right(LinearSystem(a, np.array([1.0, 0.0])), h, w, cfg)
        assert res.status == "breakdown"
        assert res.trace.breakdown is not None
        assert res.trace.breakdown.iteration == 0

    def test_orthodir_recovery_solves_skew_system(self):
        a = np.array([[0.0, 1.0], [-1.0, 0.0]])
        h = PreconditionerHandle.identity(2)
        w = WeightOperator.identity(2)
        cfg = SolveConfig(breakdown_policy="restart_orthodir_style")
        res = wp_gcr_right(LinearSystem(a, np.array([1.0, 0.0])), h, w, cfg)
        assert res.status == "converged"
        assert np.allclose(res.x, [0.0, 1.0])
        assert res.trace.breakdown is not None

    def test_orthodir_recovery_under_truncation_and_restart(self):
        # window trimming must not lose the recovery source direction
        a = np.array([[0.0, 1.0], [-1.0, 0.0]])
        h = PreconditionerHandle.identity(2)
        w = WeightOperator.identity(2)
        for overrides in ({}, {"truncation_window": 0}, {"truncation_window": 1},
                          {"restart_period": 1}):
            cfg = SolveConfig(breakdown_policy="restart_orthodir_style", **overrides)
            res = wp_gcr_right(LinearSystem(a, np.array([1.0, 0.0])), h, w, cfg)
            assert res.status == "converged", overrides
            assert np.allclose(res.x, [0.0, 1.0])

    def test_matches_explicit_krylov_least_squares(self):
        rng = np.random.default_rng(101)
        n = 8
        sym = make_spd(rng, n)
        skew = rng.standard_normal((n, n))
        a = sym + 0.4 * (skew - skew.T)
        b = rng.standard_normal(n)
        h, w, cfg = identity_setup(n)
        res = wp_gcr_right(LinearSystem(a, b), h, w, cfg)
        assert res.status == "converged"
        oracle = krylov_ls_residuals(a, np.eye(n), np.eye(n), b, res.iterations)
        assert_sequences_close(res.trace.residual_norm_weighted, oracle)

    def test_converged_true_residual(self):
        a, h_dense, b = make_pd_system(5)
        h, w, cfg = dense_setup(a, h_dense)
        res = wp_gcr_right(LinearSystem(a, b), h, w, cfg)
        assert res.status == "converged"
        true_res = b - a @ res.x
        w_mat = h_dense
        rw = np.sqrt(true_res @ w_mat @ true_res)
        bw = np.sqrt(b @ w_mat @ b)
        assert rw <= 2.0 * cfg.rel_tolerance * bw

    def test_monotone_and_orthogonal_residuals(self):
        a, h_dense, b = make_pd_system(8)
        h, w, cfg = dense_setup(a, h_dense, record_iterates=True)
        res = wp_gcr_right(LinearSystem(a, b), h, w, cfg)
        norms = res.trace.residual_norm_weighted
        for prev, cur in zip(norms, norms[1:]):
            assert cur <= prev * (1.0 + 1e-12)
        # every residual is W-orthogonal to the directions already taken
        for i, x_i in enumerate(res.trace.iterates):
            r_i = b - a @ x_i
            wr = h_dense @ r_i
            rw = np.sqrt(max(r_i @ wr, 0.0))
            for q in res.q_directions[:i]:
                qn = np.sqrt(q @ h_dense @ q)
                assert abs(wr @ q) <= 1e-8 * max(rw * qn, 1e-30)

    def test_direction_norm_never_exceeds_image_norm(self):
        a, h_dense, b = make_pd_system(12)
        h, w, cfg = dense_setup(a, h_dense)
        res = wp_gcr_right(LinearSystem(a, b), h, w, cfg)
        for az_norm, delta in zip(res.trace.az_norm_weighted, res.trace.delta):
            assert np.sqrt(delta) <= az_norm * (1.0 + 1e-12)

    def test_deltas_positive(self):
        a, h_dense, b = make_pd_system(6)
        h, w, cfg = dense_setup(a, h_dense)
        res = wp_gcr_right(LinearSystem(a, b), h, w, cfg)
        assert all(d > 0.0 for d in res.trace.delta)

    def test_nonzero_initial_guess(self):
        a, h_dense, b = make_pd_system(21, n=10)
        h, w, cfg = dense_setup(a, h_dense)
        x0 = np.linalg.solve(a, b) + 1e-3
        res = wp_gcr_right(LinearSystem(a, b, x0=x0), h, w, cfg)
        assert res.status == "converged"
        assert np.allclose(a @ res.x, b, atol=1e-5 * np.linalg.norm(b))


class TestVariants:
    def test_mr_per_step_identity_exact(self):
        rng = np.random.default_rng(7)
        a = make_spd(rng, 10)
        b = rng.standard_normal(10)
        h, w, _ = identity_setup(10)
        cfg = SolveConfig(truncation_window=0, max_iterations=200)
        res = wp_mr(LinearSystem(a, b), h, w, cfg)
        tr = res.trace
        for i in range(res.iterations):
            lhs = tr.residual_norm_weighted[i + 1] ** 2 / tr.residual_norm_weighted[i] ** 2
            rhs = 1.0 - tr.gamma[i] ** 2 / (tr.delta[i] * tr.residual_norm_weighted[i] ** 2)
            assert abs(lhs - rhs) <= 1e-10

    def test_orthomin_full_window_equals_gcr(self):
        a, h_dense, b = make_pd_system(3, n=12)
        h, w, _ = dense_setup(a, h_dense)
        full = wp_gcr_right(LinearSystem(a, b), h, w, SolveConfig(record_iterates=True))
        trunc = wp_orthomin(LinearSystem(a, b), h, w,
                            SolveConfig(record_iterates=True), k=12)
        assert full.iterations == trunc.iterations
        for xa, xb in zip(full.trace.iterates, trunc.trace.iterates):
            assert np.allclose(xa, xb, atol=1e-12 * max(np.abs(xa).max(), 1.0))

    def test_restart_markers(self):
        a, h_dense, b = make_pd_system(9, n=15)
        h, w, _ = dense_setup(a, h_dense)
        res = wp_gcr_restarted(LinearSystem(a, b), h, w, SolveConfig(), k=3)
        assert res.status == "converged"
        assert res.trace.restart_markers
        assert all(m % 3 == 0 for m in res.trace.restart_markers)

    def test_truncated_monotone(self):
        a, h_dense, b = make_pd_system(11, n=15)
        h, w, _ = dense_setup(a, h_dense)
        for k in (0, 1, 3):
            res = wp_orthomin(LinearSystem(a, b), h, w, SolveConfig(max_iterations=400), k=k)
            assert res.status == "converged"
            norms = res.trace.residual_norm_weighted
            for prev, cur in zip(norms, norms[1:]):
                assert cur <= prev * (1.0 + 1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolveConfig(rel_tolerance=0.0)
        with pytest.raises(ValueError):
            SolveConfig(restart_period=2, truncation_window=1)
        with pytest.raises(ValueError):
            SolveConfig(stopping_norm="elsewhere")


class TestLeftGcr:
    def test_identity_one_iteration(self):
        h, w, cfg = identity_setup(3)
        res = wp_gcr_left(LinearSystem(np.eye(3), np.array([1.0, 2.0, 3.0])), h, w, cfg)
        assert res.status == "converged"
        assert res.iterations == 1

    def test_left_right_equivalence(self):
        for seed in (0, 1, 2):
            a, h_dense, b = make_pd_system(seed, n=12)
            h = PreconditionerHandle.from_dense(h_dense, hermitian_flag=True)
            w_right = WeightOperator.from_dense(h_dense)
            h_inv = np.linalg.inv(h_dense)
            w_left = WeightOperator.from_dense(0.5 * (h_inv + h_inv.T))
            cfg = SolveConfig(record_iterates=True, rel_tolerance=1e-8)
            right = wp_gcr_right(LinearSystem(a, b), h, w_right, cfg)
            left = wp_gcr_left(LinearSystem(a, b), h, w_left, cfg)
            count = min(len(right.trace.iterates), len(left.trace.iterates))
            for xr, xl in zip(right.trace.iterates[:count], left.trace.iterates[:count]):
                scale = max(np.linalg.norm(xr), 1e-30)
                assert np.linalg.norm(xr - xl) <= 1e-10 * scale

    def test_single_distinct_eigenvalue_converges_immediately(self):
        # H A is a multiple of the identity: the Krylov space is exact after one step
        a = np.diag([1.0, 2.0, 4.0])
        h_dense = np.diag([8.0, 4.0, 2.0])
        h = PreconditionerHandle.from_dense(h_dense, hermitian_flag=True)
        w = WeightOperator.identity(3)
        res = wp_gcr_left(LinearSystem(a, np.array([1.0, 1.0, 1.0])), h, w, SolveConfig())
        assert res.status == "converged"
        assert res.iterations == 1

    def test_matches_preconditioned_least_squares(self):
        rng = np.random.default_rng(55)
        a = np.diag(rng.uniform(1.0, 5.0, 9))
        h_dense = np.diag(rng.uniform(0.5, 2.0, 9))
        b = rng.standard_normal(9)
        h = PreconditionerHandle.from_dense(h_dense, hermitian_flag=True)
        w = WeightOperator.identity(9)
        res = wp_gcr_left(LinearSystem(a, b), h, w, SolveConfig(rel_tolerance=1e-8))
        assert res.status == "converged"
        # the preconditioned operator has at most 9 distinct eigenvalues
        assert res.iterations <= 9
        # oracle on the preconditioned residual: min ||H b - H A x||_2
        oracle = krylov_ls_residuals(h_dense @ a, np.eye(9), np.eye(9), h_dense @ b,
                                     res.iterations)
        assert_sequences_close(res.trace.residual_norm_weighted, oracle)


class TestWhpFamily:
    def test_exact_inverse_preconditioner(self):
        rng = np.random.default_rng(3)
        a = make_spd(rng, 8)
        h = PreconditionerHandle.from_dense(np.linalg.inv(a), hermitian_flag=True)
        b = rng.standard_normal(8)
        res = whp_gcr(LinearSystem(a, b), h, SolveConfig())
        assert res.status == "converged"
        assert res.iterations == 1

    def test_requires_spd_flag(self):
        h = PreconditionerHandle.from_dense(np.eye(3), hermitian_flag=False)
        with pytest.raises(NotHermitianPreconditionerError):
            whp_gcr(LinearSystem(np.eye(3), np.ones(3)), h, SolveConfig())

    def test_rejects_truncated_config(self):
        h = PreconditionerHandle.identity(3)
        with pytest.raises(ValueError):
            whp_gcr(LinearSystem(np.eye(3), np.ones(3)), h,
                    SolveConfig(truncation_window=1))

    def test_matches_generic_engine(self):
        a, h_dense, b = make_pd_system(13, n=14)
        h = PreconditionerHandle.from_dense(h_dense, hermitian_flag=True)
        w = WeightOperator.from_dense(h_dense)
        cfg = SolveConfig(record_iterates=True)
        generic = wp_gcr_right(LinearSystem(a, b), h, w, cfg)
        special = whp_gcr(LinearSystem(a, b), h, cfg)
        count = min(len(generic.trace.iterates), len(special.trace.iterates))
        for xg, xs in zip(generic.trace.iterates[:count], special.trace.iterates[:count]):
            assert np.linalg.norm(xg - xs) <= 1e-10 * max(np.linalg.norm(xg), 1e-30)

    def test_two_by_two_step_ratio(self):
        # unit symmetric part plus unit-strength skew part: the per-step
        # contraction cannot exceed sqrt(1 - 1/2)
        a = np.array([[1.0, 1.0], [-1.0, 1.0]])
        h = PreconditionerHandle.identity(2)
        res = whp_gcr(LinearSystem(a, np.array([1.0, 0.3])), h, SolveConfig())
        assert res.status == "converged"
        norms = res.trace.residual_norm_weighted
        for prev, cur in zip(norms, norms[1:]):
            if prev > 1e-14:
                assert cur / prev <= 0.7072

    def test_alternates_identity_system(self):
        h, _, cfg = identity_setup(4)
        b = np.array([1.0, 2.0, 3.0, 4.0])
        for solver in (whp_gcr, whp_gcr_alt_a, whp_gcr_alt_b):
            res = solver(LinearSystem(np.eye(4), b), h, cfg)
            assert res.status == "converged"
            assert res.iterations == 1
            assert np.allclose(res.x, b)

    def test_alternates_match_primary(self):
        # clustered spectrum so the run ends before the dimension bound
        rng = np.random.default_rng(77)
        n = 12
        sym = make_spd(rng, n, shift=6.0)
        skew = rng.standard_normal((n, n))
        skew = 0.5 * (skew - skew.T)
        a = sym + 0.2 * np.linalg.norm(sym, 2) * skew / np.linalg.norm(skew, 2)
        b = rng.standard_normal(n)
        h = PreconditionerHandle.identity(n)
        cfg = SolveConfig(record_iterates=True, rel_tolerance=1e-9)
        base = whp_gcr(LinearSystem(a, b), h, cfg)
        for solver in (whp_gcr_alt_a, whp_gcr_alt_b):
            other = solver(LinearSystem(a, b), h, cfg)
            count = min(len(base.trace.iterates), len(other.trace.iterates))
            for xa, xb in zip(base.trace.iterates[:count], other.trace.iterates[:count]):
                scale = max(np.linalg.norm(xa), 1e-30)
                assert np.linalg.norm(xa - xb) <= 1e-9 * scale


class TestMeshProblemRuns:
    def test_whp_matches_generic_on_mesh_problem(self, cdr_assembled):
        from wpkrylov.schwarz import PartitionSpec, build_partition, build_preconditioner

        assembled = cdr_assembled(20)
        maps = build_partition(assembled.m_matrix, PartitionSpec(4, "strips"),
                               coords=assembled.dof_coords)
        precond = build_preconditioner(assembled.m_matrix, maps, "one_level_sym")
        h = precond.as_handle()
        w = precond.as_weight(validate=False)
        system = LinearSystem(assembled.operator(), assembled.rhs)
        cfg = SolveConfig(record_iterates=True)
        generic = wp_gcr_right(system, h, w, cfg)
        special = whp_gcr(system, h, cfg)
        assert generic.status == special.status == "converged"
        count = min(len(generic.trace.iterates), len(special.trace.iterates))
        for xg, xs in zip(generic.trace.iterates[:count], special.trace.iterates[:count]):
            scale = max(np.linalg.norm(xg), 1e-30)
            assert np.linalg.norm(xg - xs) <= 1e-10 * scale

    def test_restarted_gcr_respects_sharp_bound(self, cdr_assembled):
        from wpkrylov.bounds import compute_bound_report
        from wpkrylov.schwarz import PartitionSpec, build_partition, build_preconditioner

        assembled = cdr_assembled(20)
        maps = build_partition(assembled.m_matrix, PartitionSpec(4, "strips"),
                               coords=assembled.dof_coords)
        precond = build_preconditioner(assembled.m_matrix, maps, "two_level_sym")
        h = precond.as_handle()
        w = precond.as_weight(validate=False)
        system = LinearSystem(assembled.operator(), assembled.rhs)
        res = wp_gcr_restarted(system, h, w, SolveConfig(), k=5)
        assert res.status == "converged"
        norms = res.trace.residual_norm_weighted
        for prev, cur in zip(norms, norms[1:]):
            assert cur <= prev * (1.0 + 1e-12)
        report = compute_bound_report(assembled.operator(), h, w, include_fov=False)
        assert report.bound1 is not None and report.bound1 < 1.0
        for i, value in enumerate(norms):
            assert value / norms[0] <= report.bound1**i * (1.0 + 1e-10)


class TestGmresOracle:
    def test_identity_one_iteration(self):
        h, w, cfg = identity_setup(4)
        res = gmres_arnoldi_oracle(LinearSystem(np.eye(4), np.ones(4)), h, w, cfg)
        assert res.status == "converged"
        assert res.iterations == 1

    def test_matches_gcr_residuals(self):
        a, h_dense, b = make_pd_system(23)
        h, w, cfg = dense_setup(a, h_dense)
        gcr = wp_gcr_right(LinearSystem(a, b), h, w, cfg)
        oracle = gmres_arnoldi_oracle(LinearSystem(a, b), h, w, cfg)
        assert gcr.status == oracle.status == "converged"
        assert len(gcr.trace.residual_norm_weighted) == len(oracle.trace.residual_norm_weighted)
        for x, y in zip(gcr.trace.residual_norm_weighted,
                        oracle.trace.residual_norm_weighted):
            assert abs(x - y) <= 1e-9 * max(x, y)

    def test_euclidean_case_against_least_squares(self):
        rng = np.random.default_rng(66)
        n = 6
        sym = make_spd(rng, n)
        skew = rng.standard_normal((n, n))
        a = sym + 0.3 * (skew - skew.T)
        b = rng.standard_normal(n)
        h, w, cfg = identity_setup(n)
        res = gmres_arnoldi_oracle(LinearSystem(a, b), h, w, cfg)
        oracle = krylov_ls_residuals(a, np.eye(n), np.eye(n), b, res.iterations)
        assert_sequences_close(res.trace.residual_norm_weighted, oracle)

    def test_happy_breakdown_is_convergence(self):
        # rhs in a 2-dimensional invariant subspace of a 5x5 operator
        a = np.diag([2.0, 3.0, 4.0, 5.0, 6.0])
        b = np.zeros(5)
        b[0] = 1.0
        h, w, _ = identity_setup(5)
        cfg = SolveConfig(rel_tolerance=1e-13)
        res = gmres_arnoldi_oracle(LinearSystem(a, b), h, w, cfg)
        assert res.status == "converged"
        assert np.allclose(a @ res.x, b)

    def test_restarted_oracle(self):
        a, h_dense, b = make_pd_system(31, n=15)
        h, w, _ = dense_setup(a, h_dense)
        res = gmres_arnoldi_oracle(LinearSystem(a, b), h, w,
                                   SolveConfig(restart_period=4, max_iterations=300))
        assert res.status == "converged"
