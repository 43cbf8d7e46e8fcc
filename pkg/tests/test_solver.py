import io
import math

import numpy as np
import pytest

from core.compander_service import CompanderService
from core.distortion_service import DistortionService
from core.exceptions import ConvergenceError, DomainError, ShapeError
from core.experiment_service import snr_db
from core.sensing_service import SensingService
from core.solver_service import FEASIBILITY_SLACK, TRACE_HEADER, SolverService
from models.experiment import SparseSignalSpec
from models.quantizer import INF, GaussianSource
from models.reconstruction import AUTO, SolverConfig, WeightedConstraint


def _lp(v, p):
    return float(np.max(np.abs(v))) if math.isinf(p) else float(np.sum(np.abs(v) ** p) ** (1 / p))


def _instances(count, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    for i in range(count):
        M = (2, 5, 20)[i % 3]
        p = (3, 4, 7)[(i // 3) % 3]
        v = rng.standard_normal(M) * rng.uniform(0.1, 10.0)
        radius = rng.uniform(0.05, 0.95) * _lp(v, p)
        yield v, p, radius


def _tight(**kwargs):
    return SolverConfig(max_iters=20000, rel_change_tol=1e-10, **kwargs)


def _qcs_instance(plevels, seed, p, N=64, K=3, M=40, B=5):
    src = GaussianSource(1.0)
    q = CompanderService.design_quantizer(B, src)
    x = SensingService.sparse_signal(SparseSignalSpec(N=N, K=K, seed=seed))
    phi = SensingService.gaussian_matrix(M, N, seed + 100)
    meas = SensingService.qcs_measure(x, phi, q, plevels.plevel_table(p, q))
    center = meas.levels if p == 2 else meas.plevels
    constraint = WeightedConstraint(p=p, weights=DistortionService.dpc_weights(center, p, src),
                                    radius=DistortionService.epsilon_p(M, B, p, src), center=center)
    return x, phi, q, meas, constraint


class TestSoftThreshold:

    def test_values(self):
        np.testing.assert_array_equal(SolverService.soft_threshold([3.0, -0.5, -2.0, 0.0], 1.0),
                                      [2.0, 0.0, -1.0, 0.0])

    def test_zero_threshold_is_identity(self):
        u = np.array([1.5, -2.5, 0.1])
        np.testing.assert_array_equal(SolverService.soft_threshold(u, 0.0), u)


class TestProjection:

    def test_euclidean_ball(self):
        np.testing.assert_allclose(SolverService.project_lp_ball([3.0, 4.0], 2, 1.0), [0.6, 0.8])

    def test_max_ball_clips(self):
        np.testing.assert_array_equal(SolverService.project_lp_ball([3.0, -0.2, -5.0], INF, 1.0),
                                      [1.0, -0.2, -1.0])

    @pytest.mark.parametrize("p", [2, 3, 4, 7])
    def test_interior_point_unchanged(self, p):
        v = np.array([0.1, -0.2, 0.05])
        np.testing.assert_array_equal(SolverService.project_lp_ball(v, p, 1.0), v)

    def test_lands_on_sphere(self):
        v = np.array([2.0, -1.0, 0.5, 0.0])
        z = SolverService.project_lp_ball(v, 4, 0.7)
        assert _lp(z, 4) == pytest.approx(0.7, rel=1e-10)
        assert z[3] == 0.0
        assert np.all(np.sign(z[:3]) == np.sign(v[:3]))

    def test_matches_bisection_oracle(self):
        for v, p, radius in _instances(24, seed=21):
            check = SolverService.projection_self_check(v, p, radius)
            assert check['oracle_distance'] <= 1e-6
            assert check['kkt_residual'] < 1e-8
            assert check['idempotence_error'] <= 1e-12
            assert check['sphere_error'] <= 1e-9 * radius

    @pytest.mark.slow
    def test_matches_bisection_oracle_full_grid(self):
        for v, p, radius in _instances(200, seed=22):
            check = SolverService.projection_self_check(v, p, radius)
            assert check['oracle_distance'] <= 1e-6
            assert check['kkt_residual'] < 1e-8
            assert check['idempotence_error'] <= 1e-12

    def test_kkt_residual_flags_a_wrong_point(self):
        v = np.array([2.0, 1.0, -0.5])
        z = SolverService.project_lp_ball(v, 3, 1.0)
        assert SolverService.kkt_residual(z, v, 3) < 1e-8
        assert SolverService.kkt_residual(z[::-1], v, 3) > 1e-3

    def test_warm_started_multiplier(self):
        v = np.array([100.0, -60.0, 30.0, 5.0, -1.0])
        z, lam = SolverService._project(v, 7, 1.0)
        assert lam > 0.0
        warm, lam_warm = SolverService._project(v, 7, 1.0, max_newton=2, lam0=lam)
        np.testing.assert_allclose(warm, z, rtol=1e-12)
        assert lam_warm == lam
        with pytest.raises(ConvergenceError):
            SolverService._project(v, 7, 1.0, max_newton=2)

    def test_out_of_bracket_seed_is_ignored(self):
        v = np.array([2.0, -1.0, 0.5])
        np.testing.assert_allclose(SolverService._project(v, 4, 0.7, lam0=1e9)[0],
                                   SolverService.project_lp_ball(v, 4, 0.7), rtol=1e-12)

    @pytest.mark.parametrize("p,radius", [(1.5, 1.0), (3, 0.0), (3, math.inf)])
    def test_invalid_ball(self, p, radius):
        with pytest.raises(DomainError):
            SolverService.project_lp_ball([1.0, 2.0], p, radius)


class TestDualProx:

    @pytest.mark.parametrize("p", [2, 4, INF])
    def test_moreau_identity(self, p):
        rng = np.random.Generator(np.random.Philox(30))
        v, y = rng.standard_normal((2, 8)) * 3
        sigma, radius = 0.7, 0.9
        dual = SolverService.prox_dual_fidelity(v, sigma, y, p, radius)
        primal = y + SolverService.project_lp_ball(v / sigma - y, p, radius)
        np.testing.assert_allclose(dual + sigma * primal, v, atol=1e-9)


class TestOperatorNorm:

    def test_matches_svd(self):
        mat = np.random.Generator(np.random.Philox(31)).standard_normal((20, 50))
        assert SolverService.operator_norm(mat) == pytest.approx(np.linalg.norm(mat, 2), rel=1e-3)

    def test_diagonal(self):
        assert SolverService.operator_norm(np.diag([1.0, -4.0, 2.0])) == pytest.approx(4.0, rel=1e-6)

    def test_errors(self):
        with pytest.raises(DomainError):
            SolverService.operator_norm(np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            SolverService.operator_norm(np.zeros(3))


class TestConstraintAndConfig:

    def test_constraint_validation(self):
        with pytest.raises(DomainError):
            WeightedConstraint(p=1, weights=np.ones(2), radius=1.0, center=np.zeros(2))
        with pytest.raises(DomainError):
            WeightedConstraint(p=2, weights=np.array([1.0, 0.0]), radius=1.0, center=np.zeros(2))
        with pytest.raises(DomainError):
            WeightedConstraint(p=2, weights=np.ones(2), radius=math.inf, center=np.zeros(2))
        with pytest.raises(ShapeError):
            WeightedConstraint(p=2, weights=np.ones(3), radius=1.0, center=np.zeros(2))
        assert WeightedConstraint(p=INF, weights=np.ones(4), radius=0.0, center=np.zeros(4)).M == 4

    def test_config_validation(self):
        with pytest.raises(DomainError):
            SolverConfig(theta=1.5)
        with pytest.raises(DomainError):
            SolverConfig(step_sigma=0.1)
        with pytest.raises(DomainError):
            SolverConfig(step_sigma=-0.1, step_tau=0.1)
        assert SolverConfig().auto_steps

    def test_config_dict(self):
        data = SolverConfig(max_iters=50).to_dict()
        assert data['step_sigma'] == 'AUTO' and data['max_iters'] == 50
        back = SolverConfig.from_dict({**data, 'unknown': 1})
        assert back.step_tau is AUTO and back.max_iters == 50
        explicit = SolverConfig.from_dict({'step_sigma': 0.2, 'step_tau': 0.3})
        assert explicit.step_sigma == 0.2 and not explicit.auto_steps


class TestGBPDN:

    @pytest.mark.parametrize("p", [2, 4, INF])
    def test_analytic_instance(self, p):
        constraint = WeightedConstraint(p=p, weights=np.ones(2), radius=1.0, center=np.array([2.0, 0.0]))
        report = SolverService.gbpdn_solve(constraint.center, np.eye(2), constraint, _tight())
        assert report.converged and not report.diverged
        np.testing.assert_allclose(report.estimate, [1.0, 0.0], atol=1e-4)
        assert report.objective == pytest.approx(1.0, abs=1e-4)
        assert report.fidelity_residual <= 1e-4
        assert report.tau == pytest.approx(0.99, rel=1e-6)

    def test_feasible_zero_returns_immediately(self):
        constraint = WeightedConstraint(p=2, weights=np.ones(2), radius=1.0, center=np.array([0.5, 0.0]))
        report = SolverService.gbpdn_solve(constraint.center, np.eye(2), constraint)
        assert report.iterations == 0 and report.converged
        np.testing.assert_array_equal(report.estimate, np.zeros(2))
        assert report.fidelity_residual == pytest.approx(-0.5)

    def test_explicit_steps_checked(self):
        constraint = WeightedConstraint(p=2, weights=np.ones(2), radius=1.0, center=np.array([2.0, 0.0]))
        with pytest.raises(DomainError):
            SolverService.gbpdn_solve(constraint.center, np.eye(2), constraint,
                                      SolverConfig(step_sigma=1.0, step_tau=1.0))
        report = SolverService.gbpdn_solve(constraint.center, np.eye(2), constraint,
                                           _tight(step_sigma=0.5, step_tau=0.5))
        np.testing.assert_allclose(report.estimate, [1.0, 0.0], atol=1e-4)

    def test_shape_mismatch(self):
        constraint = WeightedConstraint(p=2, weights=np.ones(3), radius=1.0, center=np.zeros(3))
        with pytest.raises(ShapeError):
            SolverService.gbpdn_solve(np.zeros(3), np.eye(2), constraint)

    def test_weight_and_radius_scaling(self):
        y = np.array([2.0, 0.0])
        base = WeightedConstraint(p=4, weights=np.ones(2), radius=1.0, center=y)
        scaled = WeightedConstraint(p=4, weights=np.full(2, 3.0), radius=3.0, center=y)
        a = SolverService.gbpdn_solve(y, np.eye(2), base, _tight()).estimate
        b = SolverService.gbpdn_solve(y, np.eye(2), scaled, _tight()).estimate
        np.testing.assert_allclose(a, b, atol=1e-4)

    def test_row_permutation(self):
        rng = np.random.Generator(np.random.Philox(40))
        phi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        y = np.array([2.0, 0.0, 2.0])
        w = rng.uniform(0.5, 1.5, 3)
        perm = np.array([2, 0, 1])
        a = SolverService.gbpdn_solve(y, phi, WeightedConstraint(p=3, weights=w, radius=0.5, center=y), _tight())
        b = SolverService.gbpdn_solve(y[perm], phi[perm], WeightedConstraint(
            p=3, weights=w[perm], radius=0.5, center=y[perm]), _tight())
        np.testing.assert_allclose(a.estimate, b.estimate, atol=1e-4)

    def test_trace_rows(self):
        constraint = WeightedConstraint(p=2, weights=np.ones(2), radius=1.0, center=np.array([2.0, 0.0]))
        buf = io.StringIO()
        report = SolverService.gbpdn_solve(constraint.center, np.eye(2), constraint,
                                           SolverConfig(max_iters=15, verbose=True), trace=buf)
        rows = buf.getvalue().strip().splitlines()
        assert rows[0] == ','.join(TRACE_HEADER)
        assert len(rows) == report.iterations + 1

    def test_stops_at_iteration_cap(self):
        constraint = WeightedConstraint(p=2, weights=np.ones(2), radius=1.0, center=np.array([2.0, 0.0]))
        report = SolverService.gbpdn_solve(constraint.center, np.eye(2), constraint, SolverConfig(max_iters=3))
        assert report.iterations == 3 and not report.converged
        assert report.to_dict()['iterations'] == 3

    def test_early_stop_is_pulled_into_the_ball(self, plevels):
        _, phi, _, meas, constraint = _qcs_instance(plevels, seed=7, p=4)
        report = SolverService.gbpdn_solve(constraint.center, phi, constraint, SolverConfig(max_iters=5))
        assert not report.converged and report.feasibility_rounds >= 1
        assert report.fidelity_residual <= 0.0
        assert report.to_dict()['feasibility_rounds'] == report.feasibility_rounds

    @pytest.mark.parametrize("p", [2, 4, INF])
    def test_converged_runs_are_feasible(self, plevels, p):
        for seed in (11, 12):
            _, phi, _, _, constraint = _qcs_instance(plevels, seed=seed, p=p)
            report = SolverService.gbpdn_solve(constraint.center, phi, constraint)
            assert not report.diverged
            assert report.fidelity_residual <= FEASIBILITY_SLACK * constraint.radius
            if report.converged:
                weighted = constraint.weights * (constraint.center - phi @ report.estimate)
                assert _lp(weighted, p) <= constraint.radius * (1 + FEASIBILITY_SLACK)

    def test_infeasible_instance_is_not_converged(self):
        # the ball around y misses range(phi)
        phi = np.array([[1.0], [1.0]])
        y = np.array([1.0, -1.0])
        constraint = WeightedConstraint(p=2, weights=np.ones(2), radius=0.5, center=y)
        report = SolverService.gbpdn_solve(y, phi, constraint, SolverConfig(max_iters=500))
        assert not report.converged and not report.diverged
        assert report.fidelity_residual > 0.0

    @pytest.mark.slow
    def test_recovers_sparse_signal(self):
        rng = np.random.Generator(np.random.Philox(41))
        N, M, K = 64, 40, 3
        x = np.zeros(N)
        x[rng.choice(N, K, replace=False)] = rng.choice([-1.0, 1.0], K) * rng.uniform(1.0, 2.0, K)
        phi = rng.standard_normal((M, N))
        y = phi @ x
        constraint = WeightedConstraint(p=2, weights=np.ones(M), radius=1e-3, center=y)
        report = SolverService.gbpdn_solve(y, phi, constraint, SolverConfig(max_iters=50000, rel_change_tol=1e-9))
        assert np.linalg.norm(report.estimate - x) <= 0.05 * np.linalg.norm(x)


class TestQuantizedPipeline:

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_small_instance_end_to_end(self, plevels, seed):
        x, phi, q, meas, constraint = _qcs_instance(plevels, seed=seed, p=2)
        report = SolverService.gbpdn_solve(constraint.center, phi, constraint)
        assert not report.diverged
        assert snr_db(x, report.estimate) >= 20.0

        dc = DistortionService.check_consistency(report.estimate, phi, meas.levels, 'DC', q)
        assert dc.holds and dc.residual <= dc.radius
        assert dc.radius == pytest.approx(constraint.radius)

        # x itself is feasible, so the l1 minimizer cannot be larger
        if np.linalg.norm(meas.levels - phi @ x) <= constraint.radius:
            assert report.objective <= np.abs(x).sum() + 1e-4
