from types import SimpleNamespace

import numpy as np
import pytest

from app.errors import InvalidArgumentError, OutOfDomainError
from app.factors import InitialPriorModel, MotionPriorFactor, PoseModel, bind_interpolated, gp_interpolator
from app.gp import (GpPriorModel, GpTrajectory, global_from_local, global_jacobians, interpolate_covariance,
                    interpolate_mean, interpolate_raw, lambda_psi, local_from_global, local_pair, prior_covariance,
                    prior_residual, prior_residual_raw, process_noise, process_noise_inv, state_from_array,
                    support_times, transition)
from app.manifold import SE2, VectorSpace, numerical_jacobian
from app.solver import CovarianceRecovery, Problem, optimize
from tests.oracles import rts_smoother, trapezoid_noise, wnoa_matrices

WNOA_1D = GpPriorModel(2, [[1.0]])
WNOJ_1D = GpPriorModel(3, [[1.0]])


def se2_state(pose, vel, acc=None):
    derivs = (vel,) if acc is None else (vel, acc)
    return np.concatenate([pose] + [np.asarray(d, dtype=float) for d in derivs])


class Test_PriorModel:
    def test_from_name(self):
        assert GpPriorModel.from_name("wnoa", np.eye(3)).derivative_blocks == 2
        assert GpPriorModel.from_name("wnoj", np.eye(3)).state_dim == 9

    @pytest.mark.parametrize("qc", [[[1.0, 2.0], [0.0, 1.0]], [[-1.0]], [[1.0, 0.0], [0.0, 0.0]]])
    def test_invalid_qc(self, qc):
        with pytest.raises(InvalidArgumentError):
            GpPriorModel(2, qc)

    def test_unknown_name(self):
        with pytest.raises(InvalidArgumentError):
            GpPriorModel.from_name("wnoz", np.eye(3))

    def test_state_descriptor(self):
        desc = GpPriorModel.from_name("wnoj", np.eye(3)).state_descriptor(SE2())
        assert desc.dof == 9

    def test_support_times(self):
        times = support_times(0.0, 2.5, 2.0)
        np.testing.assert_allclose(times, [0.0, 0.5, 1.0, 1.5, 2.0, 2.5])
        assert times[-1] == 2.5

    def test_support_times_past_end(self):
        times = support_times(0.0, 2.3, 2.0)
        np.testing.assert_allclose(times, [0.0, 0.5, 1.0, 1.5, 2.0, 2.5])


class Test_Transition:
    def test_zero_dt(self):
        np.testing.assert_array_equal(transition(WNOJ_1D, 0.0), np.eye(3))

    def test_semigroup(self):
        np.testing.assert_allclose(transition(WNOJ_1D, 2.0), transition(WNOJ_1D, 1.0) @ transition(WNOJ_1D, 1.0))

    def test_negative_dt(self):
        with pytest.raises(InvalidArgumentError):
            transition(WNOA_1D, -1.0)

    @pytest.mark.parametrize("prior", [WNOA_1D, WNOJ_1D])
    def test_noise_matches_quadrature(self, prior):
        np.testing.assert_allclose(process_noise(prior, 1.0), trapezoid_noise(prior.derivative_blocks, 1.0), atol=1e-8)

    @pytest.mark.parametrize("blocks", [2, 3])
    @pytest.mark.parametrize("dt", [0.1, 1.0, 3.0])
    def test_noise_inverse(self, blocks, dt):
        prior = GpPriorModel(blocks, np.diag([0.5, 2.0, 1.0]))
        np.testing.assert_allclose(process_noise_inv(prior, dt) @ process_noise(prior, dt), np.eye(3 * blocks), atol=1e-8)

    def test_noise_singular_at_zero(self):
        with pytest.raises(InvalidArgumentError):
            process_noise(WNOA_1D, 0.0)

    def test_prior_covariance(self):
        p0 = np.diag([0.1, 0.2])
        out = prior_covariance(WNOA_1D, [0.0, 1.0], p0)
        phi, q = wnoa_matrices(1.0)
        np.testing.assert_allclose(out[1], phi @ p0 @ phi.T + q)


class Test_PriorResidual:
    def test_identical_states(self):
        s = state_from_array(SE2(), 3, 0.0, np.zeros(9))
        s1 = state_from_array(SE2(), 3, 1.0, np.zeros(9))
        prior = GpPriorModel.from_name("wnoj", np.eye(3))
        e, _, _ = prior_residual(prior, s, s1)
        np.testing.assert_allclose(e, np.zeros(9), atol=1e-12)

    def test_straight_line_wnoa(self):
        desc = SE2()
        prior = GpPriorModel.from_name("wnoa", np.eye(3))
        v = np.array([1.0, 0.0, 0.0])
        x1 = desc.boxplus(desc.identity(), 2.0 * v)
        e, _, _ = prior_residual_raw(prior, desc, 2.0, se2_state(desc.identity(), v), se2_state(x1, v))
        np.testing.assert_allclose(e, np.zeros(6), atol=1e-12)

    def test_jacobians_against_finite_differences(self, rng):
        desc = SE2()
        prior = GpPriorModel.from_name("wnoj", np.diag([1.0, 2.0, 0.5]))
        state_desc = prior.state_descriptor(desc)
        raw_i = se2_state([0.2, -0.1, 0.3], [1.0, 0.1, 0.2], [0.05, -0.02, 0.1])
        raw_ip1 = se2_state([1.1, 0.3, 0.6], [0.9, 0.2, 0.3], [0.0, 0.1, -0.1])
        dt = 0.8
        _, j_i, j_ip1 = prior_residual_raw(prior, desc, dt, raw_i, raw_ip1)
        num_i = numerical_jacobian(lambda r: prior_residual_raw(prior, desc, dt, r, raw_ip1)[0], raw_i, state_desc)
        num_ip1 = numerical_jacobian(lambda r: prior_residual_raw(prior, desc, dt, raw_i, r)[0], raw_ip1, state_desc)
        np.testing.assert_allclose(j_i, num_i, atol=1e-5)
        np.testing.assert_allclose(j_ip1, num_ip1, atol=1e-5)

    def test_non_increasing_times(self):
        s = state_from_array(VectorSpace(1), 2, 1.0, np.zeros(2))
        with pytest.raises(InvalidArgumentError):
            prior_residual(WNOA_1D, s, s)


class Test_LambdaPsi:
    def test_left_end(self):
        lam, psi = lambda_psi(WNOJ_1D, 0.0, 1.0, 0.0)
        np.testing.assert_allclose(lam, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(psi, np.zeros((3, 3)), atol=1e-12)

    def test_right_end_limit(self):
        lam, psi = lambda_psi(WNOA_1D, 0.0, 1.0, 1.0 - 1e-9)
        np.testing.assert_allclose(lam, np.zeros((2, 2)), atol=1e-6)
        np.testing.assert_allclose(psi, np.eye(2), atol=1e-6)

    def test_wnoa_midpoint_by_hand(self):
        lam, psi = lambda_psi(WNOA_1D, 0.0, 1.0, 0.5)
        np.testing.assert_allclose(psi, [[0.5, -0.125], [1.5, -0.25]], atol=1e-12)
        np.testing.assert_allclose(lam, [[0.5, 0.125], [-1.5, -0.25]], atol=1e-12)
        np.testing.assert_allclose(lam @ [0.0, 1.0] + psi @ [1.0, 1.0], [0.5, 1.0], atol=1e-12)

    def test_half_open(self):
        with pytest.raises(OutOfDomainError):
            lambda_psi(WNOA_1D, 0.0, 1.0, 1.0)


class Test_LocalGlobal:
    def test_reference_is_zero(self):
        """
        No próprio referencial xi = 0, então J_r = I e o termo de curvatura
        sum_k xi'_k (∂J_r/∂xi_k) xi' = -ad(xi') xi' / 2 se anula: as derivadas
        locais são as globais.
        """
        vel, acc = [0.5, 0.1, 0.2], [0.0, 0.1, 0.0]
        s = state_from_array(SE2(), 3, 0.0, se2_state([1.0, 2.0, 0.3], vel, acc))
        local = local_from_global(s, s)
        np.testing.assert_allclose(local[:3], np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(local[3:6], vel, atol=1e-12)
        np.testing.assert_allclose(local[6:], acc, atol=1e-12)

    def test_vector_space(self):
        ref = state_from_array(VectorSpace(2), 2, 0.0, [1.0, 2.0, 0.0, 0.0])
        s = state_from_array(VectorSpace(2), 2, 1.0, [3.0, 1.0, 0.5, -0.5])
        np.testing.assert_allclose(local_from_global(ref, s), [2.0, -1.0, 0.5, -0.5])

    def test_se2_round_trip(self):
        ref = state_from_array(SE2(), 3, 0.0, se2_state([1.0, -2.0, 0.4], [0.3, 0.0, 0.1], [0.0, 0.0, 0.0]))
        s = state_from_array(SE2(), 3, 1.0, se2_state([1.8, -1.1, 1.2], [0.9, 0.2, -0.3], [0.1, -0.2, 0.05]))
        back = global_from_local(ref, local_from_global(ref, s), time=1.0)
        np.testing.assert_allclose(back.to_array(), s.to_array(), atol=1e-9)

    @pytest.mark.parametrize("blocks", [2, 3])
    @pytest.mark.parametrize("dtheta", [0.9, 1e-4, 0.0])
    def test_local_jacobians_against_finite_differences(self, blocks, dtheta):
        desc = SE2()
        state_desc = GpPriorModel(blocks, np.eye(3)).state_descriptor(desc)
        extra = [[0.1, -0.2, 0.05]] if blocks == 3 else []
        raw_i = np.concatenate([[0.3, -0.4, 0.2], [1.0, 0.2, 0.4]] + extra)
        raw_ip1 = np.concatenate([[1.2, 0.1, 0.2 + dtheta], [0.8, -0.1, 0.3]] + [[-0.1, 0.3, 0.2]] * (blocks - 2))
        n = blocks * 3
        _, jac = local_pair(desc, blocks, raw_i, raw_ip1)
        num_i = numerical_jacobian(lambda r: local_pair(desc, blocks, r, raw_ip1)[0], raw_i, state_desc)
        num_ip1 = numerical_jacobian(lambda r: local_pair(desc, blocks, raw_i, r)[0], raw_ip1, state_desc)
        np.testing.assert_allclose(jac[:, :n], num_i, atol=1e-6)
        np.testing.assert_allclose(jac[:, n:], num_ip1, atol=1e-6)

    @pytest.mark.parametrize("blocks", [2, 3])
    @pytest.mark.parametrize("theta", [0.7, 1e-4, 0.0])
    def test_global_jacobians_against_finite_differences(self, blocks, theta):
        desc = SE2()
        state_desc = GpPriorModel(blocks, np.eye(3)).state_descriptor(desc)
        ref = np.concatenate([[0.5, -1.0, 0.4], np.zeros(3 * (blocks - 1))])
        local = np.concatenate([[0.6, 0.2, theta], [0.9, -0.3, 0.5]] + [[0.2, 0.1, -0.4]] * (blocks - 2))
        _, j_ref, j_local = global_jacobians(desc, blocks, ref, local)
        num_local = numerical_jacobian(lambda v: global_jacobians(desc, blocks, ref, v)[0], local,
                                       VectorSpace(3 * blocks), state_desc)
        num_ref = numerical_jacobian(lambda p: global_jacobians(desc, blocks, np.concatenate([p, ref[3:]]), local)[0],
                                     ref[:3], desc, state_desc)
        np.testing.assert_allclose(j_local, num_local, atol=1e-6)
        np.testing.assert_allclose(j_ref, num_ref, atol=1e-6)


class Test_InterpolateMean:
    def make_vector_traj(self, prior):
        desc = VectorSpace(2)
        v = np.array([1.0, 2.0])
        extra = [np.zeros(2)] if prior.derivative_blocks == 3 else []
        states = tuple(state_from_array(desc, prior.derivative_blocks, t, np.concatenate([t * v, v] + extra))
                       for t in (0.0, 2.0, 3.0))
        return GpTrajectory(desc, prior, states), v

    @pytest.mark.parametrize("blocks", [2, 3])
    def test_constant_velocity_is_lerp(self, blocks):
        traj, v = self.make_vector_traj(GpPriorModel(blocks, np.eye(2)))
        for t in (0.3, 1.7, 2.5):
            s = interpolate_mean(traj, t)
            np.testing.assert_allclose(s.element.data, t * v, atol=1e-12)
            np.testing.assert_allclose(s.velocity, v, atol=1e-12)

    @pytest.mark.parametrize("t", [0.1, 0.35, 0.8])
    def test_wnoa_is_cubic_hermite(self, t):
        desc = VectorSpace(1)
        p0, v0, p1, v1, dt = 0.2, 1.5, -0.4, 0.3, 2.0
        states = (state_from_array(desc, 2, 0.0, np.array([p0, v0])), state_from_array(desc, 2, dt, np.array([p1, v1])))
        s = interpolate_mean(GpTrajectory(desc, WNOA_1D, states), t * dt)
        h = [2 * t ** 3 - 3 * t ** 2 + 1, t ** 3 - 2 * t ** 2 + t, -2 * t ** 3 + 3 * t ** 2, t ** 3 - t ** 2]
        dh = [6 * t ** 2 - 6 * t, 3 * t ** 2 - 4 * t + 1, -6 * t ** 2 + 6 * t, 3 * t ** 2 - 2 * t]
        pos = h[0] * p0 + h[1] * dt * v0 + h[2] * p1 + h[3] * dt * v1
        vel = (dh[0] * p0 + dh[1] * dt * v0 + dh[2] * p1 + dh[3] * dt * v1) / dt
        assert s.element.data[0] == pytest.approx(pos, abs=1e-12)
        assert s.velocity[0] == pytest.approx(vel, abs=1e-12)

    def test_support_time_exact(self):
        traj, _ = self.make_vector_traj(GpPriorModel(2, np.eye(2)))
        assert interpolate_mean(traj, 2.0) is traj.states[1]
        assert interpolate_mean(traj, 3.0) is traj.states[2]

    def test_out_of_domain(self):
        traj, _ = self.make_vector_traj(GpPriorModel(2, np.eye(2)))
        with pytest.raises(OutOfDomainError):
            interpolate_mean(traj, 3.5)

    def test_se2_constant_twist(self):
        desc = SE2()
        prior = GpPriorModel.from_name("wnoj", np.eye(3))
        x0 = np.array([0.5, -0.2, 0.3])
        v = np.array([1.0, 0.2, 0.4])
        states = tuple(state_from_array(desc, 3, t, se2_state(desc.boxplus(x0, t * v), v, np.zeros(3)))
                       for t in (0.0, 1.0))
        traj = GpTrajectory(desc, prior, states)
        s = interpolate_mean(traj, 0.37)
        np.testing.assert_allclose(s.element.data, desc.boxplus(x0, 0.37 * v), atol=1e-8)
        np.testing.assert_allclose(s.velocity, v, atol=1e-8)
        np.testing.assert_allclose(s.acceleration, np.zeros(3), atol=1e-6)

    def test_interpolation_jacobians(self):
        desc = SE2()
        prior = GpPriorModel.from_name("wnoj", np.eye(3))
        state_desc = prior.state_descriptor(desc)
        raw_i = se2_state([0.2, 0.1, -0.3], [1.0, 0.0, 0.3], [0.1, 0.0, 0.0])
        raw_ip1 = se2_state([1.0, 0.4, 0.1], [0.8, 0.1, 0.5], [0.0, 0.2, 0.1])
        lam, psi = lambda_psi(prior, 0.0, 1.0, 0.4)
        _, j_i, j_ip1, _ = interpolate_raw(prior, desc, raw_i, raw_ip1, lam, psi, jacobians=True)
        num_i = numerical_jacobian(lambda r: interpolate_raw(prior, desc, r, raw_ip1, lam, psi)[0],
                                   raw_i, state_desc, state_desc)
        num_ip1 = numerical_jacobian(lambda r: interpolate_raw(prior, desc, raw_i, r, lam, psi)[0],
                                     raw_ip1, state_desc, state_desc)
        np.testing.assert_allclose(j_i, num_i, atol=1e-5)
        np.testing.assert_allclose(j_ip1, num_ip1, atol=1e-5)


def solve_chain(times, measurements, sigma, p0_mean, p0_cov):
    """
    Cadeia GP 1D (WNOA) com prior inicial e medidas de posição nos tempos de suporte.
    """
    desc = VectorSpace(1)
    state_desc = WNOA_1D.state_descriptor(desc)
    problem = Problem()
    keys = [problem.add_variable(state_desc, np.zeros(2), time=float(t)) for t in times]
    traj = GpTrajectory(desc, WNOA_1D, tuple(state_from_array(desc, 2, float(t), np.zeros(2)) for t in times))
    for j in range(len(times) - 1):
        problem.add_factor(MotionPriorFactor(WNOA_1D, desc, (keys[j], keys[j + 1]), float(times[j + 1] - times[j])))
    backend = SimpleNamespace(interpolator=lambda stamp: gp_interpolator(traj, keys, stamp))
    problem.add_factor(bind_interpolated(InitialPriorModel(float(times[0]), p0_mean, p0_cov), backend))
    for t, z in measurements.items():
        problem.add_factor(bind_interpolated(PoseModel(t, [z], [[sigma ** 2]]), backend))
    optimize(problem)
    return problem, keys, traj.with_states(problem.values())


class Test_RtsEquivalence:
    sigma = 0.3
    p0_mean = np.array([0.1, 0.9])
    p0_cov = np.diag([0.2 ** 2, 0.3 ** 2])

    def setup_chain(self, rng):
        times = np.arange(6) * 0.5
        measurements = {float(t): float(rng.normal(t, 0.3)) for t in times}
        problem, keys, traj = solve_chain(times, measurements, self.sigma, self.p0_mean, self.p0_cov)
        return times, measurements, problem, keys, traj

    def test_support_means(self, rng):
        times, measurements, _, _, traj = self.setup_chain(rng)
        xs, _ = rts_smoother(list(times), measurements, self.sigma, self.p0_mean, self.p0_cov)
        for s, x in zip(traj.states, xs):
            np.testing.assert_allclose(s.to_array(), x, atol=1e-9)

    def test_interpolated_means_and_covariances(self, rng):
        times, measurements, problem, keys, traj = self.setup_chain(rng)
        queries = [0.2, 1.35, 2.05]
        grid = sorted([float(t) for t in times] + queries)
        xs, ps = rts_smoother(grid, measurements, self.sigma, self.p0_mean, self.p0_cov)
        recovery = CovarianceRecovery(problem)
        for q in queries:
            g = grid.index(q)
            s = interpolate_mean(traj, q)
            np.testing.assert_allclose(s.to_array(), xs[g], atol=1e-8)
            i = traj.segment_for_time(q)
            joint = recovery.joint([keys[i], keys[i + 1]])
            np.testing.assert_allclose(interpolate_covariance(traj, q, joint), ps[g], atol=1e-8)

    def test_support_covariances(self, rng):
        times, measurements, problem, keys, _ = self.setup_chain(rng)
        _, ps = rts_smoother(list(times), measurements, self.sigma, self.p0_mean, self.p0_cov)
        recovery = CovarianceRecovery(problem)
        for k, p in zip(keys, ps):
            np.testing.assert_allclose(recovery.joint([k]), p, atol=1e-9)


class Test_InterpolateCovariance:
    def test_prior_only_chain(self):
        p0 = np.diag([0.05, 0.02])
        problem, keys, traj = solve_chain(np.array([0.0, 1.0]), {}, 1.0, np.zeros(2), p0)
        joint = CovarianceRecovery(problem).joint(keys)
        out = interpolate_covariance(traj, 0.4, joint)
        np.testing.assert_allclose(out, prior_covariance(WNOA_1D, [0.0, 0.4], p0)[-1], atol=1e-10)

    def test_left_end_block(self):
        problem, keys, traj = solve_chain(np.array([0.0, 1.0]), {1.0: 0.5}, 0.2, np.zeros(2), np.eye(2))
        joint = CovarianceRecovery(problem).joint(keys)
        np.testing.assert_allclose(interpolate_covariance(traj, 0.0, joint), joint[:2, :2])
        np.testing.assert_allclose(interpolate_covariance(traj, 1.0, joint), joint[2:, 2:])

    def test_joint_is_symmetric_positive(self):
        problem, keys, _ = solve_chain(np.arange(4.0), {1.0: 0.5, 2.0: 1.1}, 0.2, np.zeros(2), np.eye(2))
        joint = CovarianceRecovery(problem).joint(keys[1:3])
        np.testing.assert_allclose(joint, joint.T)
        assert np.linalg.eigvalsh(joint).min() > 0.0

    def test_rejects_bad_joint(self):
        problem, keys, traj = solve_chain(np.array([0.0, 1.0]), {}, 1.0, np.zeros(2), np.eye(2))
        with pytest.raises(InvalidArgumentError):
            interpolate_covariance(traj, 0.5, np.eye(3))
        bad = np.eye(4)
        bad[0, 1] = 1.0
        with pytest.raises(InvalidArgumentError):
            interpolate_covariance(traj, 0.5, bad)


def test_nees_consistency_over_seeds():
    """
    NEES médio dos estados [p, v] fica perto de 2 quando os dados seguem o próprio prior.
    """
    sigma = 0.2
    p0_mean = np.zeros(2)
    p0_cov = np.diag([0.5, 0.5])
    times = np.arange(21) * 0.5
    nees = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.multivariate_normal(p0_mean, p0_cov)
        truth = [x]
        for j in range(1, len(times)):
            phi, q = wnoa_matrices(times[j] - times[j - 1])
            x = phi @ x + rng.multivariate_normal(np.zeros(2), q)
            truth.append(x)
        measurements = {float(t): float(s[0] + rng.normal(0.0, sigma)) for t, s in zip(times, truth)}
        problem, keys, traj = solve_chain(times, measurements, sigma, p0_mean, p0_cov)
        recovery = CovarianceRecovery(problem)
        for k, s, x_true in zip(keys, traj.states, truth):
            e = s.to_array() - x_true
            nees.append(float(e @ np.linalg.solve(recovery.joint([k]), e)))
    assert 2 * 0.8 <= np.mean(nees) <= 2 * 1.25
