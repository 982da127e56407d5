import math

import numpy as np
import pytest

from conftest import central_gradient, simulate_zip
from zibc.errors import InputError
from zibc.poisson import fit_poisson
from zibc.zip_em import fit_zip, zero_design, zip_covariance, zip_hessian, zip_loglik, zip_score


@pytest.fixture()
def zip_data(rng):
    return simulate_zip(rng, 300, beta=(1.0, -0.4, 0.3), gamma=(-0.4, 0.5, 0.2))


def poisson_only_data(rng, n, beta=(1.0, -0.4, 0.3)):
    """Pure Poisson data whose zero count does not exceed the fitted Poisson expectation."""
    while True:
        X, _, _ = simulate_zip(rng, n)
        y = rng.poisson(np.exp(X @ np.asarray(beta))).astype(float)
        pfit = fit_poisson(X, y)
        if np.mean(y == 0) <= np.mean(np.exp(-np.exp(X @ pfit.beta_hat))):
            return X, y, pfit


def intercept_only_data(rng, n, pi=0.3, mu=2.0):
    y = np.where(rng.random(n) < pi, 0, rng.poisson(mu, n)).astype(float)
    return np.ones((n, 1)), y


class TestFitZip:
    def test_stationarity(self, zip_data):
        X, y, _ = zip_data
        fit = fit_zip(X, y)
        Z = zero_design(X, "full")
        assert fit.converged
        assert np.max(np.abs(zip_score(fit.params, X, Z, y))) / len(y) < 1e-6

    def test_intercept_only_moment_identities(self, rng):
        for _ in range(5):
            X, y = intercept_only_data(rng, 500)
            fit = fit_zip(X, y, zero_spec="intercept")
            pi, mu = 1 / (1 + math.exp(-fit.zero_gamma[0])), math.exp(fit.count_beta[0])
            assert (1 - pi) * mu == pytest.approx(y.mean(), abs=1e-8)
            assert pi + (1 - pi) * math.exp(-mu) == pytest.approx(np.mean(y == 0), abs=1e-8)

    def test_no_excess_zeros_limit(self, rng):
        X, y, pfit = poisson_only_data(rng, 400)
        zfit = fit_zip(X, y, zero_spec="intercept", covariance=False)
        assert zfit.boundary
        assert zfit.zero_gamma[0] < -10
        assert np.all(np.abs(zfit.count_beta - pfit.beta_hat) < 2 * pfit.se)

    def test_weak_excess_zeros_converge_interior(self):
        rng = np.random.default_rng(3)
        X, _, _ = simulate_zip(rng, 2000)
        y = rng.poisson(np.exp(X @ np.array([1.0, -0.4, 0.3]))).astype(float)
        fit = fit_zip(X, y, zero_spec="intercept")
        assert not fit.boundary
        assert fit.score_norm < 1e-6
        assert -8 < fit.zero_gamma[0] < -4

    def test_recovers_treatment_effect(self):
        rng = np.random.default_rng(77)
        est = []
        for _ in range(100):
            X, y, _ = simulate_zip(rng, 400, beta=(1.2, -0.5, 0.25), gamma=(-0.3, 0.5, 0.125))
            est.append(fit_zip(X, y, covariance=False).count_beta[1])
        est = np.asarray(est)
        mcse = est.std(ddof=1) / math.sqrt(len(est))
        assert abs(est.mean() + 0.5) < 3 * mcse

    def test_nests_poisson(self, rng):
        for _ in range(10):
            X, y, _ = simulate_zip(rng, 150)
            assert fit_zip(X, y, covariance=False).log_likelihood >= \
                fit_poisson(X, y).log_likelihood - 1e-8

    def test_em_path_monotone(self, rng):
        for _ in range(10):
            X, y, _ = simulate_zip(rng, 200, gamma=(0.0, 0.5, -0.3))
            path = np.asarray(fit_zip(X, y, covariance=False).loglik_path)
            assert np.all(np.diff(path) >= -1e-10)

    def test_label_swap(self, zip_data, rng):
        X, y, _ = zip_data
        perm = rng.permutation(len(y))
        a, b = fit_zip(X, y), fit_zip(X[perm], y[perm])
        np.testing.assert_allclose(a.count_beta, b.count_beta, atol=1e-10)
        np.testing.assert_allclose(a.zero_gamma, b.zero_gamma, atol=1e-10)

    def test_no_zeros_rejected(self):
        X = np.column_stack([np.ones(6), [0, 1] * 3])
        with pytest.raises(InputError, match="Poisson"):
            fit_zip(X, np.array([1.0, 2, 3, 1, 2, 4]))

    def test_all_zeros_rejected(self):
        with pytest.raises(InputError):
            fit_zip(np.ones((4, 1)), np.zeros(4))

    def test_intercept_spec_width(self, zip_data):
        X, y, _ = zip_data
        assert fit_zip(X, y, zero_spec="intercept").zero_gamma.shape == (1,)
        assert fit_zip(X, y).zero_gamma.shape == (3,)


class TestDerivatives:
    def test_score_matches_finite_difference(self, zip_data):
        X, y, _ = zip_data
        Z = zero_design(X)
        theta = np.array([0.8, -0.2, 0.1, -0.3, 0.4, 0.0])
        np.testing.assert_allclose(zip_score(theta, X, Z, y),
                                   central_gradient(lambda t: zip_loglik(t, X, Z, y), theta),
                                   rtol=1e-6, atol=1e-5)

    def test_hessian_matches_finite_difference(self, zip_data):
        X, y, _ = zip_data
        Z = zero_design(X)
        theta = np.array([0.8, -0.2, 0.1, -0.3, 0.4, 0.0])
        H = zip_hessian(theta, X, Z, y)
        fd = np.array([central_gradient(lambda t: zip_score(t, X, Z, y)[j], theta)
                       for j in range(theta.size)])
        np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-4)


class TestCovariance:
    def test_symmetric_and_psd(self, zip_data):
        X, y, _ = zip_data
        fit = fit_zip(X, y)
        C = fit.covariance
        assert np.max(np.abs(C - C.T)) < 1e-10
        assert np.all(np.linalg.eigvalsh(C) > 0)
        np.testing.assert_allclose(zip_covariance(fit, X, zero_design(X), y), C, atol=1e-12)

    def test_finite_difference_matches_analytic_inverse(self, zip_data):
        X, y, _ = zip_data
        fit = fit_zip(X, y)
        analytic = np.linalg.inv(-zip_hessian(fit.params, X, zero_design(X), y))
        np.testing.assert_allclose(fit.covariance, analytic, rtol=1e-5)

    def test_nested_limit_count_block(self):
        X, y, pfit = poisson_only_data(np.random.default_rng(3), 2000)
        zfit = fit_zip(X, y, zero_spec="intercept")
        assert zfit.covariance is not None
        np.testing.assert_allclose(np.diag(zfit.covariance)[:3], np.diag(pfit.covariance), rtol=0.05)

    def test_intercept_se_matches_bootstrap(self):
        rng = np.random.default_rng(11)
        X, y = intercept_only_data(rng, 2000)
        fit = fit_zip(X, y, zero_spec="intercept")
        boot = []
        for _ in range(1000):
            idx = rng.integers(0, len(y), len(y))
            boot.append(fit_zip(X[idx], y[idx], zero_spec="intercept", covariance=False).count_beta[0])
        assert fit.count_se[0] == pytest.approx(np.std(boot, ddof=1), rel=0.05)
