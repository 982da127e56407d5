"""Zero-inflation bias correction from aggregate trial summaries.

Each arm's average structural-zero rate is recovered from its outcome mean
and zero proportion by solving

    (1 - pi) * mu = ybar
    pi + (1 - pi) * exp(-mu) = p0

and the Poisson treatment effect is shifted by
``-log(1 - pi_T) + log(1 - pi_C)``. Standard errors are carried over from
the Poisson fit unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .distributions import _design, _pi_vector
from .errors import DegenerateArmError, DomainError, InputError

PI_UPPER = 1.0 - 1e-9
PI_XTOL = 1e-14


@dataclass(frozen=True)
class StudySummary:
    """Aggregate data one two-arm trial must report."""

    study_id: str
    n_c: int | None
    n_t: int | None
    ybar_c: float
    ybar_t: float
    p0_c: float
    p0_t: float
    beta1_cv: float
    se1_cv: float

    def __post_init__(self):
        for name in ("ybar_c", "ybar_t", "p0_c", "p0_t", "beta1_cv", "se1_cv"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InputError(f"{name} must be finite, got {value}")
        for name in ("n_c", "n_t"):
            n = getattr(self, name)
            if n is not None and n < 2:
                raise InputError(f"{name} must be at least 2 when given")
        for name in ("p0_c", "p0_t"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InputError(f"{name} must be a proportion in [0, 1]")
        for name in ("ybar_c", "ybar_t"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative")
        if self.se1_cv <= 0:
            raise InputError("se1_cv must be positive")


@dataclass(frozen=True)
class ZeroRateSolution:
    pi_bar: float
    mu_bar: float
    residual: tuple[float, float]
    clamped: bool


@dataclass(frozen=True)
class CorrectionResult:
    study_id: str
    beta1_cv: float
    delta1_hat: float
    beta1_zibc: float
    se1: float
    control: ZeroRateSolution
    treated: ZeroRateSolution

    @property
    def idr(self) -> float:
        return math.exp(self.beta1_zibc)

    @property
    def z_value(self) -> float:
        return self.beta1_zibc / self.se1

    @property
    def p_value(self) -> float:
        return wald_p_value(self.beta1_zibc, self.se1)

    @property
    def clamped(self) -> bool:
        return self.control.clamped or self.treated.clamped


def wald_p_value(estimate, se) -> float:
    """Two-sided normal p-value for ``estimate / se``."""
    return float(2.0 * norm.sf(abs(estimate / se)))


def zero_rate_residual(pi_bar, mu_bar, ybar, p0):
    return ((1.0 - pi_bar) * mu_bar - ybar,
            pi_bar + (1.0 - pi_bar) * math.exp(-mu_bar) - p0)


def _excess_zero_gap(pi, ybar, p0):
    return pi + (1.0 - pi) * math.exp(-ybar / (1.0 - pi)) - p0


def solve_zero_rate(ybar: float, p0: float) -> ZeroRateSolution:
    """Average structural-zero rate and Poisson mean of one arm.

    Eliminating ``mu = ybar / (1 - pi)`` leaves a scalar equation in ``pi``
    that changes sign on ``[0, 1)`` exactly when ``p0 > exp(-ybar)``. When
    the zeros are already explained by a Poisson with mean ``ybar`` the
    solution is clamped to ``pi = 0`` and flagged.
    """
    if not (math.isfinite(ybar) and math.isfinite(p0)):
        raise DomainError("ybar and p0 must be finite")
    if ybar <= 0:
        raise DegenerateArmError(f"outcome mean must be positive, got {ybar}")
    if not 0.0 <= p0 < 1.0:
        raise DegenerateArmError(f"zero proportion must lie in [0, 1), got {p0}")

    if p0 <= math.exp(-ybar):
        return ZeroRateSolution(0.0, ybar, zero_rate_residual(0.0, ybar, ybar, p0), True)
    if _excess_zero_gap(PI_UPPER, ybar, p0) <= 0:
        raise DegenerateArmError(f"zero proportion {p0} too close to 1 to bracket the zero rate")

    pi = brentq(_excess_zero_gap, 0.0, PI_UPPER, args=(ybar, p0), xtol=PI_XTOL,
                rtol=4 * np.finfo(float).eps, maxiter=500)
    mu = ybar / (1.0 - pi)
    return ZeroRateSolution(pi, mu, zero_rate_residual(pi, mu, ybar, p0), False)


def _check_rate(pi, name):
    if not (0.0 <= pi < 1.0):
        raise DomainError(f"{name} must lie in [0, 1), got {pi}")


def delta1(pi_t: float, pi_c: float) -> float:
    """Zero-inflation correction to the log incidence density ratio."""
    _check_rate(pi_t, "pi_t")
    _check_rate(pi_c, "pi_c")
    return -math.log1p(-pi_t) + math.log1p(-pi_c)


def correct_intercept(beta0_cv: float, pi_bar: float) -> float:
    _check_rate(pi_bar, "pi_bar")
    return beta0_cv - math.log1p(-pi_bar)


def correct_study(summary: StudySummary) -> CorrectionResult:
    arms = {}
    for arm, ybar, p0 in (("control", summary.ybar_c, summary.p0_c),
                          ("treated", summary.ybar_t, summary.p0_t)):
        try:
            arms[arm] = solve_zero_rate(ybar, p0)
        except DegenerateArmError as exc:
            raise DegenerateArmError(str(exc), arm=arm, study_id=summary.study_id) from exc
    d = delta1(arms["treated"].pi_bar, arms["control"].pi_bar)
    return CorrectionResult(
        study_id=summary.study_id,
        beta1_cv=summary.beta1_cv,
        delta1_hat=d,
        beta1_zibc=summary.beta1_cv + d,
        se1=summary.se1_cv,
        control=arms["control"],
        treated=arms["treated"],
    )


def summarize_arms(y, treat, beta1_cv, se1_cv, study_id="study"):
    """Build a :class:`StudySummary` from individual outcomes."""
    y = np.asarray(y, dtype=float)
    treat = np.asarray(treat).astype(bool)
    yc, yt = y[~treat], y[treat]
    return StudySummary(
        study_id=str(study_id),
        n_c=int(yc.size), n_t=int(yt.size),
        ybar_c=float(yc.mean()), ybar_t=float(yt.mean()),
        p0_c=float(np.mean(yc == 0)), p0_t=float(np.mean(yt == 0)),
        beta1_cv=float(beta1_cv), se1_cv=float(se1_cv),
    )


# Individual-data diagnostics


def approximate_bias(pi_bar: float, p: int) -> np.ndarray:
    """Root of the averaged bias equation: ``(-log(1 - pi_bar), 0, ..., 0)``."""
    _check_rate(pi_bar, "pi_bar")
    out = np.zeros(p)
    out[0] = -math.log1p(-pi_bar)
    return out


def bias_equation_residual(delta, beta_star, pi_vec, X) -> np.ndarray:
    r"""``(1/n) sum {(1 - pi_i) exp(x_i'delta) - 1} exp(x_i'beta*) x_i``."""
    X = _design(X)
    delta = np.asarray(delta, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    pi = _pi_vector(pi_vec, X.shape[0])
    if delta.shape[0] != X.shape[1] or beta_star.shape[0] != X.shape[1]:
        raise InputError("delta, beta_star and the design width must agree")
    bracket = (1.0 - pi) * np.exp(X @ delta) - 1.0
    return X.T @ (bracket * np.exp(X @ beta_star)) / X.shape[0]


def q_function(beta, beta0, pi_bar, xbar, X) -> float:
    """Expected Poisson log-likelihood with ``E[y_i]`` replaced by its average value."""
    X = _design(X)
    beta = np.asarray(beta, dtype=float)
    level = (1.0 - pi_bar) * math.exp(float(np.dot(xbar, beta0)))
    eta = X @ beta
    return float(np.sum(-np.exp(eta) + level * eta))


def q_gradient(beta, beta0, pi_bar, xbar, X) -> np.ndarray:
    """Gradient of :func:`q_function` in its factorised form."""
    X = _design(X)
    beta = np.asarray(beta, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    if not (beta.shape == beta0.shape == xbar.shape == (X.shape[1],)):
        raise InputError("beta, beta0, xbar and the design width must agree")
    bracket = (1.0 - pi_bar) * math.exp(float(xbar @ (beta0 - beta))) - 1.0
    return bracket * (X.T @ np.exp(X @ beta))
