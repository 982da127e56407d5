import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import central_gradient
from zibc.correction import (
    StudySummary, approximate_bias, bias_equation_residual, correct_intercept, correct_study,
    delta1, q_function, q_gradient, solve_zero_rate, summarize_arms, wald_p_value,
)
from zibc.errors import DegenerateArmError, DomainError, InputError
from zibc.simulation import analyze_study, calibrate_gamma0, generate_study
from zibc.zip_em import fit_zip


def bisect(f, lo, hi, tol=1e-12):
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def g(pi, ybar, p0):
    return pi + (1 - pi) * math.exp(-ybar / (1 - pi)) - p0


def box_range(ybar, p0, half=0.005):
    vals = [solve_zero_rate(ybar + a, p0 + b).pi_bar for a in (-half, half) for b in (-half, half)]
    return min(vals), max(vals)


def summary(**kw):
    base = dict(study_id="s", n_c=100, n_t=100, ybar_c=1.0, ybar_t=1.0, p0_c=0.5, p0_t=0.5,
                beta1_cv=0.1, se1_cv=0.2)
    base.update(kw)
    return StudySummary(**base)


counts = st.floats(0.05, 8.0)


class TestSolveZeroRate:
    def test_girls_control(self):
        assert solve_zero_rate(0.83, 0.59).pi_bar == pytest.approx(0.49, abs=0.01)

    @pytest.mark.parametrize("ybar,p0,quoted", [(1.04, 0.45, 0.27), (0.49, 0.67, 0.45)])
    def test_quoted_rates_within_rounding_box(self, ybar, p0, quoted):
        lo, hi = box_range(ybar, p0)
        assert lo <= quoted <= hi

    def test_pure_poisson_boundary(self):
        sol = solve_zero_rate(2.0, math.exp(-2.0))
        assert sol.clamped and sol.pi_bar == 0.0 and sol.mu_bar == 2.0

    def test_bisection_oracle(self):
        sol = solve_zero_rate(1.5, 0.5)
        oracle = bisect(lambda p: g(p, 1.5, 0.5), 0.0, 1 - 1e-9)
        assert sol.pi_bar == pytest.approx(oracle, abs=1e-10)
        assert not sol.clamped

    @pytest.mark.parametrize("ybar,p0", [(0.0, 0.5), (1.0, 1.0), (-1.0, 0.2), (1.0, -0.1)])
    def test_degenerate_arm(self, ybar, p0):
        with pytest.raises(DegenerateArmError):
            solve_zero_rate(ybar, p0)

    @settings(max_examples=200, deadline=None)
    @given(ybar=counts, frac=st.floats(0.01, 0.99))
    def test_residuals(self, ybar, frac):
        floor = math.exp(-ybar)
        p0 = floor + frac * (1 - floor)
        assume(p0 < 1 - 1e-6)
        sol = solve_zero_rate(ybar, p0)
        assert 0.0 <= sol.pi_bar <= 1 - 1e-9
        assert max(abs(r) for r in sol.residual) < 1e-9


class TestDelta1:
    def test_girls(self):
        d = delta1(0.32, 0.49)
        assert d == pytest.approx(-0.2877, abs=1e-4)
        assert 0.29 + d == pytest.approx(0.01, abs=0.02)

    def test_boys(self):
        d = delta1(0.45, 0.27)
        assert d == pytest.approx(0.2831, abs=1e-4)
        assert -0.73 + d == pytest.approx(-0.46, abs=0.02)

    @given(p=st.floats(0.0, 0.999))
    def test_equal_rates(self, p):
        assert delta1(p, p) == 0.0

    @given(a=st.floats(0.0, 0.99), b=st.floats(0.0, 0.99))
    def test_sign_law(self, a, b):
        assert np.sign(delta1(a, b)) == np.sign(a - b)

    @given(a=st.floats(0.0, 0.98), b=st.floats(0.0, 0.98), h=st.floats(1e-3, 0.01))
    def test_monotone(self, a, b, h):
        assert delta1(a + h, b) > delta1(a, b)
        assert delta1(a, b + h) < delta1(a, b)

    def test_domain(self):
        with pytest.raises(DomainError):
            delta1(1.0, 0.2)
        with pytest.raises(DomainError):
            correct_intercept(0.0, 1.0)


class TestCorrectIntercept:
    def test_closed_forms(self):
        assert correct_intercept(0.0, 0.5) == pytest.approx(math.log(2), abs=1e-12)
        assert correct_intercept(math.log(1.3), 0.4) == pytest.approx(math.log(1.3 / 0.6), abs=1e-12)

    def test_matches_zip_intercept_only(self, rng):
        y = np.where(rng.random(500) < 0.35, 0, rng.poisson(1.8, 500)).astype(float)
        fit = fit_zip(np.ones((500, 1)), y, zero_spec="intercept", covariance=False)
        sol = solve_zero_rate(y.mean(), np.mean(y == 0))
        assert correct_intercept(math.log(y.mean()), sol.pi_bar) == pytest.approx(fit.count_beta[0], abs=1e-8)


class TestCorrectStudy:
    def test_identities(self):
        r = correct_study(summary(ybar_t=0.8, p0_t=0.6))
        assert r.beta1_zibc == r.beta1_cv + r.delta1_hat
        assert r.delta1_hat == delta1(r.treated.pi_bar, r.control.pi_bar)
        assert r.se1 == 0.2
        assert r.p_value == pytest.approx(wald_p_value(r.beta1_zibc, 0.2))
        assert r.idr == pytest.approx(math.exp(r.beta1_zibc))

    def test_equal_arms(self):
        r = correct_study(summary())
        assert r.delta1_hat == 0.0 and r.beta1_zibc == 0.1

    def test_girls_row(self):
        r = correct_study(StudySummary("girls", None, None, 0.83, 1.06, 0.59, 0.47, 0.29, 0.28))
        assert r.beta1_zibc == pytest.approx(0.01, abs=0.02)
        assert r.idr == pytest.approx(1.01, abs=0.02)

    def test_degenerate_arm_identified(self):
        with pytest.raises(DegenerateArmError) as info:
            correct_study(summary(study_id="x9", p0_t=1.0))
        assert info.value.arm == "treated" and info.value.study_id == "x9"

    def test_clamped_arm(self):
        r = correct_study(summary(ybar_c=2.0, p0_c=0.1))
        assert r.control.clamped and r.control.pi_bar == 0.0 and r.clamped

    def test_summary_validation(self):
        with pytest.raises(InputError):
            summary(se1_cv=0.0)
        with pytest.raises(InputError):
            summary(p0_c=1.2)
        with pytest.raises(InputError):
            summary(n_c=1)


class TestRoundTrip:
    def test_exact_against_per_arm_zip(self, rng):
        for _ in range(20):
            n = 300
            t = (rng.random(n) < 0.5).astype(float)
            pi = np.where(t == 1, 0.25, 0.4)
            mu = np.where(t == 1, 1.2, 1.8)
            y = np.where(rng.random(n) < pi, 0, rng.poisson(mu)).astype(float)
            s = summarize_arms(y, t, beta1_cv=math.log(y[t == 1].mean() / y[t == 0].mean()), se1_cv=0.1)
            r = correct_study(s)
            fits = [fit_zip(np.ones((int(np.sum(t == a)), 1)), y[t == a], zero_spec="intercept",
                            covariance=False) for a in (0, 1)]
            assert r.beta1_zibc == pytest.approx(fits[1].count_beta[0] - fits[0].count_beta[0], abs=1e-8)


class TestSummaryCorrectionQuality:
    @pytest.mark.parametrize("zero_rate", [0.2, 0.4, 0.6])
    def test_average_gap(self, zero_rate):
        beta = (1.2, -0.5, 0.25)
        cal = calibrate_gamma0(zero_rate, 0.5, beta, 0.5)
        gamma = (cal.gamma0, 0.5, cal.gamma2)
        rng = np.random.default_rng(2024)
        gaps = []
        for _ in range(200):
            rec = analyze_study(generate_study(400, 0.5, beta, gamma, rng))
            gaps.append(rec.correction.beta1_zibc - rec.beta1_mle)
        gaps = np.asarray(gaps)
        print(f"zero rate {zero_rate}: mean gap {gaps.mean():+.4f}, mean |gap| {np.abs(gaps).mean():.4f}")
        assert abs(gaps.mean()) <= 0.03


class TestIndividualDiagnostics:
    def test_bias_residual_vanishes_at_zero(self, rng):
        X = np.column_stack([np.ones(30), rng.random(30) < 0.5, rng.standard_normal(30)])
        np.testing.assert_array_equal(bias_equation_residual(np.zeros(3), [0.1, 0.2, 0.3], 0.0, X), 0.0)

    def test_bias_residual_at_approximate_root(self, rng):
        n = 200
        x = rng.standard_normal(n)
        X = np.column_stack([np.ones(n), np.r_[np.zeros(n // 2), np.ones(n // 2)], x - x.mean()])
        delta = approximate_bias(0.3, 3)
        # exp(x'beta*) constant in the covariate direction makes the first component exact
        res = bias_equation_residual(delta, [0.5, 0.0, 0.0], 0.3, X)
        assert abs(res[0]) < 1e-8

    def test_bias_residual_loop_oracle(self, rng):
        n = 20
        X = np.column_stack([np.ones(n), rng.random(n) < 0.5, rng.standard_normal(n)])
        delta, bstar, pi = rng.normal(size=3) * 0.3, rng.normal(size=3) * 0.3, rng.random(n) * 0.8
        oracle = np.zeros(3)
        for i in range(n):
            oracle += ((1 - pi[i]) * math.exp(X[i] @ delta) - 1) * math.exp(X[i] @ bstar) * X[i]
        np.testing.assert_allclose(bias_equation_residual(delta, bstar, pi, X), oracle / n, rtol=1e-12)

    def test_bias_residual_dimension_mismatch(self):
        with pytest.raises(InputError):
            bias_equation_residual(np.zeros(2), np.zeros(3), 0.1, np.ones((5, 3)))

    def test_q_gradient_bracket_vanishes(self, rng):
        X = np.column_stack([np.ones(10), rng.standard_normal(10)])
        xbar = X.mean(axis=0)
        beta0 = np.array([0.4, 0.2])
        shift = -math.log(1 - 0.3)
        beta = beta0 - np.array([shift / xbar[0], 0.0])
        np.testing.assert_allclose(q_gradient(beta, beta0, 0.3, xbar, X), 0.0, atol=1e-12)
        np.testing.assert_array_equal(q_gradient(beta0, beta0, 0.0, xbar, X), 0.0)

    def test_q_gradient_finite_difference(self, rng):
        # The factorised gradient equals dQ/dbeta when all design rows coincide.
        row = np.array([1.0, 1.0, rng.standard_normal()])
        X = np.tile(row, (8, 1))
        for _ in range(10):
            beta, beta0 = rng.normal(size=3) * 0.4, rng.normal(size=3) * 0.4
            pi = rng.random() * 0.8
            fd = central_gradient(lambda b: q_function(b, beta0, pi, row, X), beta, h=1e-6)
            np.testing.assert_allclose(q_gradient(beta, beta0, pi, row, X), fd, rtol=1e-6, atol=1e-7)

    def test_q_gradient_dimension_mismatch(self):
        with pytest.raises(InputError):
            q_gradient(np.zeros(2), np.zeros(3), 0.1, np.zeros(3), np.ones((4, 3)))
