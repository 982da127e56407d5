"""Conventional Poisson regression fitted by IRLS with step-halving."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .distributions import _design, default_labels, score_cv
from .errors import (
    ConvergenceError,
    DegenerateOutcomeError,
    InputError,
    NumericalError,
    SingularDesignError,
)

ETA_CLAMP = 30.0


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    gradient_norm: float
    labels: tuple[str, ...] = ()
    loglik_path: tuple[float, ...] = ()

    @property
    def se(self) -> np.ndarray:
        return standard_errors(self)


def standard_errors(fit) -> np.ndarray:
    if not fit.converged:
        raise NumericalError("standard errors requested for a non-converged fit")
    diag = np.diag(fit.covariance)
    if np.any(diag < 0) or not np.all(np.isfinite(diag)):
        raise NumericalError("covariance diagonal is negative or non-finite")
    return np.sqrt(diag)


def check_rank(X, labels=None, tol=1e-10):
    """Raise :class:`SingularDesignError` if ``X`` is not of full column rank.

    Uses a column-pivoted QR; pivots below ``tol`` times the largest one are
    treated as zero and the first such column is reported.
    """
    X = _design(X)
    labels = labels or default_labels(X.shape[1])
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size < X.shape[1] or d[0] == 0:
        raise SingularDesignError(labels[piv[-1]])
    bad = np.nonzero(d < tol * d[0])[0]
    if bad.size:
        raise SingularDesignError(labels[piv[bad[0]]])


def _weighted_loglik(eta, y, w):
    return float(np.sum(w * (y * eta - np.exp(eta))))


def irls_poisson(X, y, weights=None, beta_init=None, max_iter=100,
                 ll_tol=1e-10, grad_tol=1e-8):
    """Weighted Poisson IRLS core shared with the ZIP M-step.

    Maximises ``sum w_i (y_i eta_i - exp(eta_i))``. Returns
    ``(beta, loglik_path, iterations, converged, grad_norm, hit_clamp)``;
    the gradient norm is the max-norm of the weighted score divided by ``n``.
    """
    n, p = X.shape
    w = np.ones(n) if weights is None else weights
    if beta_init is None:
        beta = np.zeros(p)
        beta[0] = np.log(np.average(y, weights=w) + 0.5 / n)
    else:
        beta = np.array(beta_init, dtype=float)

    eta = np.clip(X @ beta, -ETA_CLAMP, ETA_CLAMP)
    ll = _weighted_loglik(eta, y, w)
    path = [ll]
    converged = False
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(eta)
        grad = X.T @ (w * (y - mu))
        info = (X * (w * mu)[:, None]).T @ X
        try:
            step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"Fisher information is singular: {exc}") from exc

        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            eta_c = np.clip(X @ cand, -ETA_CLAMP, ETA_CLAMP)
            ll_c = _weighted_loglik(eta_c, y, w)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            cand, eta_c, ll_c = beta, eta, ll

        rel = abs(ll_c - ll) / max(abs(ll), 1.0)
        beta, eta = cand, eta_c
        ll = max(ll, ll_c)
        path.append(ll)
        grad_norm = float(np.max(np.abs(X.T @ (w * (y - np.exp(eta)))))) / n
        if rel < ll_tol and grad_norm < grad_tol:
            converged = True
            break

    if converged:
        # One more Newton step inside the quadratic regime costs little and
        # takes the iterate to near machine precision.
        mu = np.exp(eta)
        info = (X * (w * mu)[:, None]).T @ X
        try:
            cand = beta + scipy.linalg.solve(info, X.T @ (w * (y - mu)), assume_a="pos")
            eta_c = np.clip(X @ cand, -ETA_CLAMP, ETA_CLAMP)
            ll_c = _weighted_loglik(eta_c, y, w)
            if ll_c >= ll - 1e-12 * abs(ll):
                beta, eta, ll = cand, eta_c, max(ll, ll_c)
                path[-1] = ll
                grad_norm = float(np.max(np.abs(X.T @ (w * (y - np.exp(eta)))))) / n
        except (np.linalg.LinAlgError, ValueError):
            pass

    hit_clamp = bool(np.any(np.abs(X @ beta) >= ETA_CLAMP))
    return beta, tuple(path), it, converged, grad_norm, hit_clamp


def fit_poisson(X, y, max_iter=100, ll_tol=1e-10, grad_tol=1e-8, labels=None) -> FitResult:
    """Solve the Poisson score equations for ``log(mu_i) = x_i'beta``.

    Raises
    ------
    SingularDesignError
        The design is not of full column rank.
    DegenerateOutcomeError
        Every outcome is zero, so the MLE sits at ``-inf``.
    ConvergenceError
        ``max_iter`` iterations elapsed without meeting both tolerances.
    """
    labels = tuple(labels) if labels else tuple(getattr(X, "labels", ())) or None
    X = _design(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    labels = labels or default_labels(p)
    if y.shape[0] != n:
        raise InputError(f"design has {n} rows but y has {y.shape[0]} entries")
    if n < p:
        raise InputError(f"need n >= p, got n={n}, p={p}")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise InputError("outcomes must be finite and nonnegative")
    if not np.any(y > 0):
        raise DegenerateOutcomeError("all outcomes are zero; Poisson MLE is at -inf")
    check_rank(X, labels)

    beta, path, it, converged, grad_norm, hit_clamp = irls_poisson(
        X, y, max_iter=max_iter, ll_tol=ll_tol, grad_tol=grad_tol)
    if not converged and not hit_clamp:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations (gradient {grad_norm:.3g})",
            last_iterate=beta, iterations=it)

    const = float(np.sum(gammaln(y + 1.0)))
    path = tuple(v - const for v in path)
    mu = np.exp(X @ beta)
    info = (X * mu[:, None]).T @ X
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("observed information is singular at the MLE") from exc
    cov = 0.5 * (cov + cov.T)
    grad_norm = float(np.max(np.abs(score_cv(beta, X, y))))
    return FitResult(
        beta_hat=beta,
        covariance=cov,
        log_likelihood=path[-1],
        iterations=it,
        converged=converged and not hit_clamp,
        gradient_norm=grad_norm,
        labels=labels,
        loglik_path=path,
    )


def fit_logistic(Z, r, beta_init=None, max_iter=50, tol=1e-10):
    """Newton fit of ``sum r_i zeta_i - log(1 + exp(zeta_i))`` for fractional r."""
    n, q = Z.shape
    g = np.zeros(q) if beta_init is None else np.array(beta_init, dtype=float)

    def obj(gam):
        zeta = Z @ gam
        return float(np.sum(r * zeta - np.logaddexp(0.0, zeta)))

    f = obj(g)
    for _ in range(max_iter):
        prob = 0.5 * (1.0 + np.tanh(0.5 * (Z @ g)))
        grad = Z.T @ (r - prob)
        info = (Z * (prob * (1.0 - prob))[:, None]).T @ Z
        try:
            # near-separated zero parts give a near-singular info; the line search guards the step
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = g + t * step
            f_c = obj(cand)
            if f_c >= f - 1e-12 * abs(f):
                break
            t *= 0.5
        else:
            break
        g, f_old, f = cand, f, max(f, f_c)
        if np.max(np.abs(t * step)) < tol or abs(f - f_old) < tol * max(abs(f), 1.0) * 1e-3:
            break
    return g
