"""Poisson and zero-inflated Poisson kernels, log-likelihoods and scores.

Everything here is a pure function of its arguments. Scores are scaled by
``1/n`` so that they are directly comparable with the estimating equations
solved by the Poisson and ZIP fitters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, InputError, NumericalError


@dataclass(frozen=True)
class ZipParams:
    """Structural-zero probability ``pi`` and Poisson mean ``mu``."""

    pi: float
    mu: float

    def __post_init__(self):
        if not (0.0 <= self.pi <= 1.0):
            raise DomainError(f"pi must lie in [0, 1], got {self.pi}")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise DomainError(f"mu must be positive and finite, got {self.mu}")

    def mean(self) -> float:
        return (1.0 - self.pi) * self.mu


@dataclass(frozen=True)
class DesignMatrix:
    """Model matrix with an intercept column and a 0/1 treatment column.

    Column 0 must be the constant 1 and column 1 the treatment indicator;
    any further columns are covariates.
    """

    values: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.values, dtype=float)
        if X.ndim != 2:
            raise InputError("design matrix must be two-dimensional")
        if X.shape[1] < 2:
            raise InputError("design matrix needs at least intercept and treatment columns")
        if not np.all(np.isfinite(X)):
            raise InputError("design matrix contains non-finite entries")
        if not np.all(X[:, 0] == 1.0):
            raise InputError("first design column must be the constant intercept 1")
        if not np.all(np.isin(X[:, 1], (0.0, 1.0))):
            raise InputError("second design column must be a 0/1 treatment indicator")
        labels = tuple(self.labels) or default_labels(X.shape[1])
        if len(labels) != X.shape[1]:
            raise InputError(f"{len(labels)} labels for {X.shape[1]} columns")
        object.__setattr__(self, "values", X)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_columns(cls, treat, covariates=None, covariate_names: Sequence[str] = ()):
        treat = np.asarray(treat, dtype=float)
        cols = [np.ones_like(treat), treat]
        names = ["(Intercept)", "treat"]
        if covariates is not None:
            cov = np.asarray(covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            cols.extend(cov.T)
            names.extend(covariate_names or [f"x{j + 2}" for j in range(cov.shape[1])])
        return cls(np.column_stack(cols), tuple(names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def default_labels(p: int) -> tuple[str, ...]:
    return ("(Intercept)", "treat") + tuple(f"x{j}" for j in range(2, p))


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _check_lengths(beta, X, y, pi_vec=None):
    if X.shape[0] != y.shape[0]:
        raise InputError(f"design has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if beta.shape[0] != X.shape[1]:
        raise InputError(f"beta has {beta.shape[0]} entries but design has {X.shape[1]} columns")
    if pi_vec is not None and pi_vec.shape[0] != y.shape[0]:
        raise InputError(f"pi_vec has {pi_vec.shape[0]} entries but y has {y.shape[0]}")


def _pi_vector(pi_vec, n) -> np.ndarray:
    pi = np.asarray(pi_vec, dtype=float)
    if pi.ndim == 0:
        return np.full(n, float(pi))
    if pi.shape != (n,):
        raise InputError(f"pi_vec has {pi.size} entries but y has {n}")
    return pi


def _mean_from_beta(X, beta) -> np.ndarray:
    with np.errstate(over="ignore"):
        mu = np.exp(X @ beta)
    if not np.all(np.isfinite(mu)):
        raise NumericalError("exp(x'beta) overflowed; linear predictor too large")
    return mu


def poisson_log_pmf(y, mu):
    """Log Poisson probability ``-mu + y log(mu) - log(y!)``."""
    mu_arr = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu_arr)) or np.any(mu_arr <= 0):
        raise DomainError(f"Poisson mean must be positive and finite, got {mu}")
    y_arr = np.asarray(y, dtype=float)
    out = -mu_arr + y_arr * np.log(mu_arr) - gammaln(y_arr + 1.0)
    return float(out) if out.ndim == 0 else out


def zip_log_pmf(y, params: ZipParams) -> float:
    pi, mu = params.pi, params.mu
    if y == 0:
        return float(np.log(pi + (1.0 - pi) * np.exp(-mu)))
    if pi == 1.0:
        return -np.inf
    return float(np.log1p(-pi) + poisson_log_pmf(y, mu))


def _zip_loglik_terms(mu, pi, y):
    zero = y == 0
    with np.errstate(divide="ignore"):
        out = np.where(
            zero,
            np.log(pi + (1.0 - pi) * np.exp(-mu)),
            np.log1p(-pi) + y * np.log(mu) - mu - gammaln(y + 1.0),
        )
    return out


def poisson_log_likelihood(beta, X, y) -> float:
    X = _design(X)
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_lengths(beta, X, y)
    eta = X @ beta
    mu = _mean_from_beta(X, beta)
    return float(np.sum(y * eta - mu - gammaln(y + 1.0)))


def zip_log_likelihood(beta, pi_vec, X, y) -> float:
    """ZIP log-likelihood with log-linear Poisson mean and given ``pi_i``."""
    X = _design(X)
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    pi = _pi_vector(pi_vec, y.shape[0])
    _check_lengths(beta, X, y, pi)
    mu = _mean_from_beta(X, beta)
    return float(np.sum(_zip_loglik_terms(mu, pi, y)))


def score_cv(beta, X, y) -> np.ndarray:
    """Poisson estimating equations ``(1/n) sum (y_i - exp(x_i'beta)) x_i``."""
    X = _design(X)
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_lengths(beta, X, y)
    mu = _mean_from_beta(X, beta)
    return X.T @ (y - mu) / y.shape[0]


def score_zip(beta, pi_vec, X, y) -> np.ndarray:
    """ZIP estimating equations in ``beta`` for fixed ``pi_i``.

    The first sum runs over zero outcomes only and adds back the fraction of
    the Poisson score owed to structural zeros.
    """
    X = _design(X)
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    pi = _pi_vector(pi_vec, y.shape[0])
    _check_lengths(beta, X, y, pi)
    mu = _mean_from_beta(X, beta)
    zero = y == 0
    post = np.zeros_like(mu)
    post[zero] = pi[zero] / (pi[zero] + (1.0 - pi[zero]) * np.exp(-mu[zero]))
    n = y.shape[0]
    return X.T @ (post * mu) / n + X.T @ (y - mu) / n
