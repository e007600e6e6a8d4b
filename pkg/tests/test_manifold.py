import numpy as np
import pytest

from app.errors import InvalidArgumentError
from app.manifold import (SE2, SO2, ManifoldElement, Product, TangentVector, VectorSpace, adjoint, boxminus,
                          boxplus, compose, djr_inv_dt, exp, glerp, identity, inverse, log, numerical_jacobian,
                          right_jacobian, right_jacobian_inv, wrap_angle)
from tests.oracles import central_difference


def random_pose(rng):
    return np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3.1, 3.1)])


@pytest.mark.parametrize("angle, expected", [(0.0, 0.0), (np.pi, np.pi), (-np.pi, np.pi), (2 * np.pi + 0.5, 0.5),
                                             (-0.5, -0.5)])
def test_wrap_angle(angle, expected):
    assert float(wrap_angle(angle)) == pytest.approx(expected, abs=1e-12)


class Test_Exp_Log:
    def test_zero_tangent_is_identity(self):
        np.testing.assert_array_equal(exp(SE2(), [0.0, 0.0, 0.0]).data, [0.0, 0.0, 0.0])

    def test_so2_exp_is_angle(self):
        assert exp(SO2(), [np.pi / 2]).data[0] == pytest.approx(np.pi / 2)

    def test_se2_pure_translation(self):
        np.testing.assert_allclose(exp(SE2(), [1.0, 0.0, 0.0]).data, [1.0, 0.0, 0.0], atol=1e-15)

    def test_log_identity(self):
        np.testing.assert_array_equal(log(identity(SE2())).data, np.zeros(3))

    def test_so2_log(self):
        assert log(ManifoldElement(SO2(), [np.pi / 2])).data[0] == pytest.approx(np.pi / 2)

    def test_se2_round_trip(self, rng):
        desc = SE2()
        for _ in range(1000):
            x = ManifoldElement(desc, random_pose(rng))
            np.testing.assert_allclose(exp(desc, log(x)).data, x.data, atol=1e-11)

    @pytest.mark.parametrize("theta", [0.0, 1e-8, 1e-4, 5e-4, 2e-3, 1.0, 3.0])
    def test_small_angle_branch_round_trip(self, theta):
        tau = np.array([0.7, -0.3, theta])
        np.testing.assert_allclose(log(exp(SE2(), tau)).data, tau, atol=1e-12)


class Test_Group:
    def test_compose_identity(self, rng):
        a = ManifoldElement(SE2(), random_pose(rng))
        np.testing.assert_allclose(compose(a, identity(SE2())).data, a.data)

    def test_compose_inverse(self, rng):
        a = ManifoldElement(SE2(), random_pose(rng))
        np.testing.assert_allclose(compose(a, inverse(a)).data, np.zeros(3), atol=1e-12)

    def test_se2_compose_by_hand(self):
        a = ManifoldElement(SE2(), [1.0, 0.0, np.pi / 2])
        b = ManifoldElement(SE2(), [1.0, 0.0, 0.0])
        np.testing.assert_allclose(compose(a, b).data, [1.0, 1.0, np.pi / 2], atol=1e-12)

    def test_mismatched_descriptors(self):
        with pytest.raises(InvalidArgumentError):
            compose(identity(SE2()), identity(SO2()))

    def test_wrong_dimension(self):
        with pytest.raises(InvalidArgumentError):
            ManifoldElement(SE2(), [1.0, 2.0])
        with pytest.raises(InvalidArgumentError):
            boxplus(identity(SE2()), [1.0])


class Test_Boxplus:
    def test_zero_step(self, rng):
        x = ManifoldElement(SE2(), random_pose(rng))
        np.testing.assert_allclose(boxplus(x, np.zeros(3)).data, x.data)

    def test_vector_space_is_addition(self):
        x = ManifoldElement(VectorSpace(3), [1.0, 2.0, 3.0])
        np.testing.assert_allclose(boxplus(x, [0.5, -1.0, 2.0]).data, [1.5, 1.0, 5.0])
        np.testing.assert_allclose(boxminus(x, identity(VectorSpace(3))).data, [1.0, 2.0, 3.0])

    def test_product_per_block(self):
        desc = Product(SO2(), VectorSpace(2))
        x = ManifoldElement(desc, [3.0, 1.0, 1.0])
        y = boxplus(x, [0.5, 2.0, -1.0])
        assert y.data[0] == pytest.approx(float(wrap_angle(3.5)))
        np.testing.assert_allclose(y.data[1:], [3.0, 0.0])

    def test_nested_product(self):
        desc = Product(Product(SE2(), VectorSpace(3)), VectorSpace(3))
        assert desc.dof == 9
        assert desc.ambient_dim == 9
        assert not desc.is_vector_space

    def test_boxminus_inverts_boxplus(self, rng):
        desc = SE2()
        for _ in range(50):
            x = ManifoldElement(desc, random_pose(rng))
            tau = rng.uniform(-1, 1, 3)
            np.testing.assert_allclose(boxminus(boxplus(x, tau), x).data, tau, atol=1e-10)


class Test_Jacobians:
    def test_zero_tangent(self):
        np.testing.assert_allclose(right_jacobian(SE2(), np.zeros(3)), np.eye(3))

    def test_vector_space(self, rng):
        np.testing.assert_array_equal(right_jacobian(VectorSpace(3), rng.normal(size=3)), np.eye(3))

    @pytest.mark.parametrize("tau", [[0.3, -0.1, 0.7], [1.0, 2.0, 1e-5], [-0.4, 0.2, -2.5]])
    def test_se2_against_finite_differences(self, tau):
        desc = SE2()
        tau = np.array(tau)
        x = desc.exp(tau)
        numeric = central_difference(lambda d: desc.boxminus(desc.exp(tau + d), x), np.zeros(3))
        np.testing.assert_allclose(right_jacobian(desc, tau), numeric, atol=1e-6)

    def test_inverse(self, rng):
        tau = rng.normal(size=3)
        np.testing.assert_allclose(right_jacobian_inv(SE2(), tau) @ right_jacobian(SE2(), tau), np.eye(3), atol=1e-12)

    def test_djr_inv_dt_zero_rate(self):
        np.testing.assert_array_equal(djr_inv_dt(SE2(), [0.3, 0.2, 0.1], np.zeros(3)), np.zeros((3, 3)))

    def test_djr_inv_dt_vector_space(self, rng):
        out = djr_inv_dt(VectorSpace(2), rng.normal(size=2), rng.normal(size=2))
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_djr_inv_dt_against_finite_differences(self):
        desc = SE2()
        tau = np.array([0.4, -0.2, 0.9])
        tau_dot = np.array([0.3, 0.5, -0.8])
        h = 1e-5
        numeric = (desc.jr_inv(tau + h * tau_dot) - desc.jr_inv(tau - h * tau_dot)) / (2 * h)
        np.testing.assert_allclose(djr_inv_dt(desc, tau, tau_dot), numeric, atol=1e-5)

    @pytest.mark.parametrize("tau", [[0.3, -0.1, 0.7], [1.0, 2.0, 1e-4], [-0.5, 0.4, 0.0], [0.2, 0.6, -3.0]])
    def test_jr_partials_against_finite_differences(self, tau):
        desc = SE2()
        tau = np.array(tau)
        partials = desc.jr_partials(tau)
        for k in range(3):
            numeric = central_difference(lambda d: desc.jr(tau + d[0] * np.eye(3)[k]).ravel(), [0.0])
            np.testing.assert_allclose(partials[k], numeric.reshape(3, 3), atol=1e-8)

    @pytest.mark.parametrize("tau", [[0.3, -0.1, 0.7], [1.0, 2.0, 1e-4], [-0.5, 0.4, 0.0]])
    def test_jr_second_partials_against_finite_differences(self, tau):
        desc = SE2()
        tau = np.array(tau)
        second = desc.jr_second_partials(tau)
        for l in range(3):
            numeric = central_difference(lambda d: desc.jr_partials(tau + d[0] * np.eye(3)[l]).ravel(), [0.0])
            np.testing.assert_allclose(second[:, l], numeric.reshape(3, 3, 3), atol=1e-7)

    def test_product_partials_are_block_diagonal(self):
        desc = Product(SE2(), VectorSpace(2))
        tau = np.array([0.4, -0.3, 0.8, 1.0, 2.0])
        partials = desc.jr_partials(tau)
        np.testing.assert_allclose(partials[:3, :3, :3], SE2().jr_partials(tau[:3]))
        assert not partials[3:].any()

    def test_adjoint_moves_perturbation(self, rng):
        desc = SE2()
        x = ManifoldElement(desc, random_pose(rng))
        tau = rng.normal(size=3) * 0.3
        left = compose(exp(desc, adjoint(x) @ tau), x)
        right = compose(x, exp(desc, tau))
        np.testing.assert_allclose(left.data, right.data, atol=1e-12)

    def test_numerical_jacobian_of_compose(self, rng):
        desc = SE2()
        a, b = random_pose(rng), random_pose(rng)
        jac = numerical_jacobian(lambda x: desc.compose(x, b), a, desc, desc)
        # perturbação à direita de a passa por Ad(b^-1)
        np.testing.assert_allclose(jac, desc.adjoint(desc.inverse(b)), atol=1e-6)


class Test_Glerp:
    def test_endpoints(self, rng):
        desc = SE2()
        a, b = ManifoldElement(desc, random_pose(rng)), ManifoldElement(desc, random_pose(rng))
        np.testing.assert_allclose(glerp(a, b, 0.0).data, a.data)
        np.testing.assert_allclose(glerp(a, b, 1.0).data, b.data, atol=1e-10)

    def test_so2_midpoint(self):
        a = ManifoldElement(SO2(), [0.0])
        b = ManifoldElement(SO2(), [np.pi / 2])
        assert glerp(a, b, 0.5).data[0] == pytest.approx(np.pi / 4)

    def test_vector_space_is_lerp(self):
        a = ManifoldElement(VectorSpace(2), [0.0, 2.0])
        b = ManifoldElement(VectorSpace(2), [4.0, -2.0])
        np.testing.assert_allclose(glerp(a, b, 0.25).data, [1.0, 1.0])

    def test_tangent_vector_descriptor_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            boxplus(identity(SE2()), TangentVector(VectorSpace(3), [0.0, 0.0, 0.0]))


class Test_Batch:
    @pytest.mark.parametrize("desc", [SE2(), SO2(), VectorSpace(2), Product(SE2(), VectorSpace(2))],
                             ids=["se2", "so2", "vector", "product"])
    def test_batch_matches_single(self, rng, desc):
        n = 12
        tau = rng.uniform(-2.0, 2.0, (n, desc.dof))
        tau[0] = 0.0
        tau[1, -1] = 1e-4
        xs = desc.exp_batch(tau)
        ys = desc.exp_batch(rng.uniform(-2.0, 2.0, (n, desc.dof)))
        composed = desc.compose_batch(xs, ys)
        inverted = desc.inverse_batch(xs)
        adjoints = desc.adjoint_batch(xs)
        small = desc.small_adjoint_batch(tau)
        jrs = desc.jr_batch(tau)
        for m in range(n):
            np.testing.assert_allclose(xs[m], desc.exp(tau[m]), atol=1e-12)
            np.testing.assert_allclose(composed[m], desc.compose(xs[m], ys[m]), atol=1e-12)
            np.testing.assert_allclose(inverted[m], desc.inverse(xs[m]), atol=1e-12)
            np.testing.assert_allclose(adjoints[m], desc.adjoint(xs[m]), atol=1e-12)
            np.testing.assert_allclose(small[m], desc.small_adjoint(tau[m]), atol=1e-12)
            np.testing.assert_allclose(jrs[m], desc.jr(tau[m]), atol=1e-12)
