"""Extended GP: moment expansions, flipped-joint regression and its input gradient."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from egp_alkf.egp import (
    RegressionInput,
    TrainingSet,
    _flipped_regress_many,
    build_joint_covariance,
    moment_oracle,
    perturbed_kernel,
    perturbed_mean,
    regress,
    regress_many,
    standard_regress,
    training_block,
)
from egp_alkf.errors import DimensionMismatch
from egp_alkf.gaussian_core import GaussianDensity
from egp_alkf.kernel import QuadraticMean, SquaredExponential, ZeroMean

from oracles import dmu_error, random_kernel, random_quadratic_mean, random_regression_problem, rel_err

seeds = st.integers(0, 2**32 - 1)


def se_expected_1d(d, l, var_diff, sf=1.0):
    """Exact E[k(x_i - x_j)] for a 1-D SE kernel when x_i - x_j ~ N(d, var_diff)."""
    s2 = l * l + var_diff
    return sf**2 * np.sqrt(l * l / s2) * np.exp(-0.5 * d * d / s2)


def degeneracy_error(rng):
    n, N = int(rng.integers(1, 4)), int(rng.integers(1, 11))
    k = random_kernel(rng, n, sigma_n=rng.uniform(0.01, 0.3))
    mean = random_quadratic_mean(rng, n) if rng.random() < 0.5 else ZeroMean()
    X = rng.standard_normal((N, n))
    y = rng.standard_normal(N)
    sg = rng.uniform(0.0, 0.2)
    xs = rng.standard_normal(n)
    mu0, var0 = standard_regress(k, mean, X, y, sg, xs)
    out = regress(k, mean, TrainingSet.independent(X, y, sg**2),
                  RegressionInput.uncorrelated(xs, np.zeros((n, n)), N))
    return max(abs(out.mean - mu0) / max(abs(mu0), 1e-12), abs(out.variance - var0) / max(var0, 1e-12))


class TestMomentExpansions:
    def test_mean_exact_inputs(self):
        m = QuadraticMean(np.eye(2))
        assert perturbed_mean(m, [1.0, 2.0], np.zeros((2, 2))) == pytest.approx(5.0)

    def test_mean_quadratic_exact(self):
        """The expansion is exact for a quadratic mean: E[x^T x] = |xb|^2 + tr P."""
        m = QuadraticMean(np.eye(2))
        P = np.array([[0.3, 0.1], [0.1, 0.2]])
        assert perturbed_mean(m, [1.0, 0.0], P) == pytest.approx(1.5)

    def test_kernel_exact_inputs(self):
        k = SquaredExponential(np.array([[0.01]]))
        Z = np.zeros((1, 1))
        assert perturbed_kernel(k, ZeroMean(), [0.0], [0.1], Z, Z, Z) == pytest.approx(np.exp(-0.5))

    def test_kernel_shape_check(self):
        k = SquaredExponential(np.eye(2))
        Z = np.zeros((2, 2))
        with pytest.raises(DimensionMismatch):
            perturbed_kernel(k, ZeroMean(), [0.0, 0.0], [0.0], Z, Z, Z)

    @given(seeds)
    def test_pairwise_matches_block(self, seed):
        """The pairwise Hessian route equals the vectorized Gram assembly."""
        rng = np.random.default_rng(seed)
        k, mean, train, *_ = random_regression_problem(rng)
        N = len(train)
        K = training_block(k, mean, train)
        for i in range(N):
            for j in range(N):
                # cov(x_i, x_i) = P_i, so a self pair passes P_ij = P_i
                ref = perturbed_kernel(k, mean, train.x[i], train.x[j], train.cross_cov[i, i],
                                       train.cross_cov[j, j], train.cross_cov[i, j], i == j)
                if i == j:
                    ref += train.var_g[i]
                assert K[i, j] == pytest.approx(ref, rel=1e-10, abs=1e-12)

    def test_second_order_small_variance(self):
        """Independent inputs, wide kernel: expansion tracks the exact expectation."""
        l, P = 1.0, 0.05**2
        k = SquaredExponential(np.array([[l * l]]))
        for d in (0.0, 0.5, 1.5):
            approx = perturbed_kernel(k, ZeroMean(), [d], [0.0], [[P]], [[P]], [[0.0]])
            assert approx == pytest.approx(se_expected_1d(d, l, 2 * P), rel=2e-5)


class TestMomentOracle:
    def test_rejects_small_sample(self, rng):
        k = SquaredExponential(np.eye(1))
        with pytest.raises(ValueError):
            moment_oracle(k, ZeroMean(), GaussianDensity([0.0], [[0.0]]), 100, rng)

    def test_zero_input_covariance(self):
        k = SquaredExponential(np.array([[0.04]]), 1.0, 0.0)
        inputs = GaussianDensity([0.0, 0.1], np.zeros((2, 2)))
        est = moment_oracle(k, ZeroMean(), inputs, 200_000, np.random.default_rng(1))
        K = np.array([[1.0, k.k_eval([0.0], [0.1])], [k.k_eval([0.0], [0.1]), 1.0]])
        assert np.all(np.abs(est.means) <= 3 * est.mean_se + 1e-12)
        assert np.all(np.abs(est.cov - K) <= 3 * est.cov_se + 1e-3)

    def test_quadratic_mean(self):
        m = QuadraticMean(np.array([[1.0]]), [0.5])
        k = SquaredExponential(np.array([[1.0]]), 0.1)
        inputs = GaussianDensity([0.3], [[0.04]])
        est = moment_oracle(k, m, inputs, 400_000, np.random.default_rng(2))
        assert abs(est.means[0] - perturbed_mean(m, [0.3], [[0.04]])) <= 3 * est.mean_se[0]

    def test_wide_kernel_covariance(self):
        """P = 0.05^2 on a length scale of 0.5: second-order error is far below MC noise."""
        k = SquaredExponential(np.array([[0.25]]))
        P = 0.05**2
        inputs = GaussianDensity([0.2, 0.5], P * np.eye(2))
        est = moment_oracle(k, ZeroMean(), inputs, 400_000, np.random.default_rng(3), method="conditional")
        ref = perturbed_kernel(k, ZeroMean(), [0.2], [0.5], [[P]], [[P]], [[0.0]])
        assert abs(est.cov[0, 1] - ref) <= 3 * est.cov_se[0, 1] + 1e-4

    def test_fourth_order_scaling(self):
        """Halving P cuts the expansion error by at least 3 on average (O(P^2))."""
        rng = np.random.default_rng(4)
        k = SquaredExponential(np.array([[0.01]]))
        ratios = []
        for _ in range(20):
            a, b = rng.uniform(0, 0.2, 2)
            errs = []
            for P in (0.02**2, 0.01**2):
                inputs = GaussianDensity([a, b], P * np.eye(2))
                est = moment_oracle(k, ZeroMean(), inputs, 100_000, rng, method="conditional")
                ref = perturbed_kernel(k, ZeroMean(), [a], [b], [[P]], [[P]], [[0.0]])
                errs.append(abs(est.cov[0, 1] - ref))
            ratios.append(errs[0] / max(errs[1], 1e-12))
        assert np.mean(ratios) >= 3.0

    def test_conditional_matches_draw(self):
        k = SquaredExponential(np.array([[0.04]]))
        inputs = GaussianDensity([0.0, 0.15], 0.03**2 * np.eye(2))
        a = moment_oracle(k, ZeroMean(), inputs, 300_000, np.random.default_rng(5))
        b = moment_oracle(k, ZeroMean(), inputs, 300_000, np.random.default_rng(6), method="conditional")
        assert abs(a.cov[0, 1] - b.cov[0, 1]) <= 4 * a.cov_se[0, 1]


class TestStandardRegression:
    def test_interpolates(self):
        k = SquaredExponential(np.array([[0.1]]))
        X = np.array([[0.0], [0.5], [1.0]])
        y = np.array([1.0, -1.0, 2.0])
        mu, var = standard_regress(k, ZeroMean(), X, y, 0.0, [0.5])
        assert mu == pytest.approx(-1.0, abs=1e-8)
        assert var == pytest.approx(0.0, abs=1e-8)

    def test_prior_reversion(self):
        k = SquaredExponential(np.array([[0.01]]), 1.3, 0.1)
        m = QuadraticMean(np.array([[0.0]]), [2.0])
        mu, var = standard_regress(k, m, [[0.0]], [5.0], 0.1, [50.0])
        assert mu == pytest.approx(100.0)
        assert var == pytest.approx(1.69)

    def test_dense_inverse_oracle(self):
        k = SquaredExponential(np.array([[0.09]]), 1.2, 0.2)
        X = np.array([[0.0], [0.3], [0.7]])
        y = np.array([0.5, -0.2, 0.9])
        sg = 0.05
        K = np.array([[k.k_eval(a, b, i == j) for j, b in enumerate(X)] for i, a in enumerate(X)])
        K += sg**2 * np.eye(3)
        ks = np.array([k.k_eval(a, [0.4]) for a in X])
        mu, var = standard_regress(k, ZeroMean(), X, y, sg, [0.4])
        assert mu == pytest.approx(ks @ np.linalg.inv(K) @ y, rel=1e-10)
        assert var == pytest.approx(1.44 - ks @ np.linalg.inv(K) @ ks, rel=1e-10)


class TestRegression:
    def test_empty_training_set(self):
        k = SquaredExponential(np.eye(2), 1.5)
        m = QuadraticMean(np.eye(2))
        P = 0.1 * np.eye(2)
        out = regress(k, m, TrainingSet.empty(2), RegressionInput.uncorrelated([1.0, 0.0], P, 0))
        assert out.mean == pytest.approx(perturbed_mean(m, [1.0, 0.0], P))
        gq = m.grad(np.array([1.0, 0.0]))
        t = np.trace(m.hess(np.zeros(2)) @ P)
        assert out.variance == pytest.approx(2.25 + gq @ P @ gq - 0.25 * t * t)

    @given(seeds)
    def test_degeneracy(self, seed):
        assert degeneracy_error(np.random.default_rng(seed)) <= 1e-10

    @given(seeds)
    def test_posterior_contraction(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(1, 8))
        k = SquaredExponential(np.array([[rng.uniform(0.05, 1.0)]]), 1.0, 0.1)
        X = rng.uniform(0, 1, (N + 1, 1))
        y = rng.standard_normal(N + 1)
        q = RegressionInput.uncorrelated(X[-1], [[0.0]], N)
        before = regress(k, ZeroMean(), TrainingSet.independent(X[:-1], y[:-1], 0.01), q)
        q1 = RegressionInput.uncorrelated(X[-1], [[0.0]], N + 1)
        after = regress(k, ZeroMean(), TrainingSet.independent(X, y, 0.01), q1)
        assert after.variance <= before.variance + 1e-12

    @given(seeds)
    def test_variance_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        k, mean, train, xq, P, cross = random_regression_problem(rng, input_scale=rng.uniform(0.01, 2.0))
        assert regress(k, mean, train, RegressionInput(xq, P, cross)).variance >= 0.0

    def test_flip_repairs_indefinite_joint(self):
        k = SquaredExponential(np.array([[0.01]]), 1.0, 0.0)
        big = 0.3**2
        train = TrainingSet.independent([[0.0], [0.05]], [0.0, 1.0], 0.0, np.full((2, 1, 1), big))
        q = RegressionInput.uncorrelated([0.02], [[big]], 2)
        assert np.linalg.eigvalsh(training_block(k, ZeroMean(), train)).min() < 0
        J = build_joint_covariance(k, ZeroMean(), train, q)
        assert np.linalg.eigvalsh(J).min() >= -1e-10

    @given(seeds)
    def test_fast_path_matches_flipped_route(self, seed):
        rng = np.random.default_rng(seed)
        k, mean, train, xq, P, cross = random_regression_problem(rng, input_scale=rng.uniform(0.001, 1.0))
        q = RegressionInput(xq, P, cross)
        a = regress_many(k, mean, train, [q])[0]
        mu, var, dmu = _flipped_regress_many(k, mean, train, [q])
        assert a.mean == pytest.approx(mu[0], rel=1e-8, abs=1e-10)
        assert a.variance == pytest.approx(max(var[0], 0.0), rel=1e-7, abs=1e-9)
        np.testing.assert_allclose(a.mean_grad, dmu[0], rtol=1e-7, atol=1e-9)

    def test_batch_matches_single(self, rng):
        k, mean, train, xq, P, cross = random_regression_problem(rng, N=5, n=2)
        qs = [RegressionInput(xq + 0.1 * i, P, cross) for i in range(4)]
        batch = regress_many(k, mean, train, qs)
        for q, b in zip(qs, batch):
            s = regress(k, mean, train, q)
            assert s.mean == pytest.approx(b.mean, rel=1e-12)
            assert s.variance == pytest.approx(b.variance, rel=1e-12, abs=1e-15)

    def test_query_dimension_check(self):
        train = TrainingSet.independent([[0.0, 0.0]], [1.0])
        with pytest.raises(DimensionMismatch):
            regress(SquaredExponential(np.eye(2)), ZeroMean(), train,
                    RegressionInput.uncorrelated([0.0], [[0.0]], 1))

    def test_training_set_validation(self):
        with pytest.raises(ValueError):
            TrainingSet.independent([[0.0]], [1.0], -1.0)
        C = np.zeros((2, 2, 1, 1))
        C[0, 1] = 0.5
        with pytest.raises(ValueError):
            TrainingSet([[0.0], [1.0]], [0.0, 0.0], [0.0, 0.0], C)


class TestInputGradient:
    @given(seeds)
    def test_finite_differences(self, seed):
        assert dmu_error(np.random.default_rng(seed)) <= 1e-4

    def test_through_indefinite_joint(self):
        """Exact derivative through the flip when the joint has negative eigenvalues."""
        k = SquaredExponential(np.array([[0.01]]), 1.0, 0.05)
        big = 0.2**2
        train = TrainingSet.independent([[0.0], [0.05], [0.12]], [0.3, 1.0, -0.4], 0.0,
                                        np.full((3, 1, 1), big))
        P = np.array([[big]])

        def mu(x):
            return regress(k, ZeroMean(), train, RegressionInput.uncorrelated(x, P, 3)).mean

        x0 = np.array([0.03])
        assert np.linalg.eigvalsh(training_block(k, ZeroMean(), train)).min() < 0
        g = regress(k, ZeroMean(), train, RegressionInput.uncorrelated(x0, P, 3)).mean_grad
        fd = (mu(x0 + 1e-6) - mu(x0 - 1e-6)) / 2e-6
        assert rel_err(g, np.atleast_1d(fd)) <= 1e-4
