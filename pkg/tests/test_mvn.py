import numpy as np
import pytest

from refmi.errors import NotPositiveDefinite
from refmi.mvn import ConditionalGaussian, cholesky, chol_solve, condition, psd_factor, sample

from conftest import random_pd


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_hand_factorization(self):
        L = cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, 2.0]])

    def test_random_pd_reconstruction(self, rng):
        for _ in range(20):
            m = random_pd(rng, 6)
            L = cholesky(m)
            rel = np.linalg.norm(L @ L.T - m) / np.linalg.norm(m)
            assert rel <= 1e-10

    def test_not_pd_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_singular_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 1.0], [1.0, 1.0]]))

    @pytest.mark.parametrize("dim", [1, 2, 3, 5])
    def test_chol_solve_matches_inverse(self, rng, dim):
        m = random_pd(rng, dim)
        b = rng.normal(size=dim)
        x = chol_solve(cholesky(m), b)
        np.testing.assert_allclose(m @ x, b, atol=1e-10)


class TestCondition:
    def test_independent_coordinates(self):
        g = condition(np.zeros(2), np.eye(2), [0], [5.0])
        assert g.mean == pytest.approx(0.0)
        assert g.cov[0, 0] == pytest.approx(1.0)

    @pytest.mark.parametrize("rho,y", [(0.5, 1.3), (-0.8, -2.0), (0.0, 7.0)])
    def test_bivariate_identity(self, rho, y):
        sigma = np.array([[1.0, rho], [rho, 1.0]])
        g = condition(np.zeros(2), sigma, [0], [y])
        assert g.mean[0] == pytest.approx(rho * y)
        assert g.cov[0, 0] == pytest.approx(1.0 - rho**2)

    def test_empty_obs_returns_marginal(self, rng):
        mu = rng.normal(size=3)
        sigma = random_pd(rng, 3)
        g = condition(mu, sigma, [], [])
        np.testing.assert_array_equal(g.mean, mu)
        np.testing.assert_array_equal(g.cov, sigma)

    def test_sampling_oracle_3dim(self, rng):
        # Regress tail coordinates on the observed one over a large joint
        # sample; the fitted linear predictor and residual covariance are an
        # independent estimate of the conditional law.
        mu = np.array([1.0, -0.5, 2.0])
        sigma = random_pd(rng, 3)
        n = 10**6
        draws = mu + rng.standard_normal((n, 3)) @ cholesky(sigma).T
        y_obs = 0.7
        g = condition(mu, sigma, [0], [y_obs])

        x = np.column_stack([np.ones(n), draws[:, 0]])
        beta, *_ = np.linalg.lstsq(x, draws[:, 1:], rcond=None)
        pred = beta[0] + beta[1] * y_obs
        resid = draws[:, 1:] - x @ beta
        emp_cov = resid.T @ resid / n

        for j in range(2):
            se = np.sqrt(g.cov[j, j] * (1 + (y_obs - mu[0]) ** 2 / sigma[0, 0]) / n)
            assert abs(pred[j] - g.mean[j]) < 3 * se
        np.testing.assert_allclose(emp_cov, g.cov, atol=3 * np.abs(g.cov).max() * np.sqrt(2 / n))

    def test_conditional_cov_psd_and_trace_shrinks(self, rng):
        for _ in range(25):
            dim = int(rng.integers(2, 7))
            sigma = random_pd(rng, dim)
            n_obs = int(rng.integers(1, dim))
            obs = list(rng.choice(dim, size=n_obs, replace=False))
            g = condition(np.zeros(dim), sigma, obs, np.zeros(n_obs))
            eigs = np.linalg.eigvalsh(g.cov)
            assert eigs.min() > -1e-10
            mis = [i for i in range(dim) if i not in obs]
            assert np.trace(g.cov) <= np.trace(sigma[np.ix_(mis, mis)]) + 1e-12

    def test_law_of_total_variance(self, rng):
        mu = np.array([0.5, -1.0, 0.0])
        sigma = random_pd(rng, 3)
        n = 10**5
        draws = mu + rng.standard_normal((n, 3)) @ cholesky(sigma).T
        # conditional of coords (1,2) given coord 0
        base = condition(mu, sigma, [0], [0.0])
        slope = (sigma[1:, 0] / sigma[0, 0])[:, None]
        cond_means = base.mean[:, None] + slope * (draws[:, 0] - 0.0)[None, :]
        # E[CondCov] + Var[CondMean] should reproduce the marginal variance
        total = np.diag(base.cov) + cond_means.var(axis=1)
        marginal = draws[:, 1:].var(axis=0)
        mc_se = marginal * np.sqrt(2.0 / n)
        assert np.all(np.abs(total - marginal) < 3 * mc_se)

    def test_conditioning_idempotent(self, rng):
        mu = rng.normal(size=4)
        sigma = random_pd(rng, 4)
        y = rng.normal(size=2)
        # condition on {0}, then condition the result on original coord 2
        g1 = condition(mu, sigma, [0], [y[0]])
        # remaining coords of g1 are (1, 2, 3); original coord 2 is local 1
        g2 = condition(g1.mean, g1.cov, [1], [y[1]])
        g_union = condition(mu, sigma, [0, 2], y)
        np.testing.assert_allclose(g2.mean, g_union.mean, atol=1e-12)
        np.testing.assert_allclose(g2.cov, g_union.cov, atol=1e-12)

    def test_singular_observed_block(self):
        sigma = np.array([[0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(NotPositiveDefinite):
            condition(np.zeros(2), sigma, [0], [0.0])


class TestSample:
    def test_zero_variance_degenerate(self, rng):
        g = ConditionalGaussian(np.array([3.0, -1.0]), np.zeros((2, 2)))
        draws = sample(g, rng, 50)
        np.testing.assert_array_equal(draws, np.tile([3.0, -1.0], (50, 1)))

    def test_standard_normal_clt(self):
        g = ConditionalGaussian(np.zeros(1), np.eye(1))
        draws = sample(g, np.random.default_rng(7), 10**6)
        assert abs(draws.mean()) < 4 / np.sqrt(10**6)

    def test_seed_determinism(self, rng):
        g = ConditionalGaussian(np.zeros(2), random_pd(rng, 2))
        a = sample(g, np.random.default_rng(42), 100)
        b = sample(g, np.random.default_rng(42), 100)
        np.testing.assert_array_equal(a, b)

    def test_psd_factor_rejects_negative(self):
        with pytest.raises(NotPositiveDefinite):
            psd_factor(np.array([[-1.0]]))
