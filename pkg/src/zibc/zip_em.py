"""Zero-inflated Poisson maximum likelihood by EM.

The count part has ``log(mu_i) = x_i'beta`` and the zero part
``logit(pi_i) = z_i'gamma``. The E-step posterior that an observed zero is
structural is ``pi/(pi + (1-pi) exp(-mu))``; the M-step is a weighted
Poisson fit plus a weighted logistic fit. Once the EM tolerances are met a
few safeguarded Newton steps on the observed-data likelihood remove the
slow linear tail of EM, so fits are accurate to roundoff.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit, gammaln

from .distributions import _design, default_labels
from .errors import ConvergenceError, InputError, NumericalError
from .poisson import check_rank, fit_logistic, fit_poisson, irls_poisson

WEIGHT_CLAMP = 1e-12
BOUNDARY_PI = 1e-6
STALL_HANDOFF = 10
HANDOFF_EVERY = 25


@dataclass(frozen=True)
class ZipFitResult:
    count_beta: np.ndarray
    zero_gamma: np.ndarray
    covariance: np.ndarray | None
    log_likelihood: float
    em_iterations: int
    converged: bool
    score_norm: float
    count_labels: tuple[str, ...] = ()
    zero_labels: tuple[str, ...] = ()
    loglik_path: tuple[float, ...] = ()
    boundary: bool = False

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.count_beta, self.zero_gamma])

    @property
    def covariance_available(self) -> bool:
        return self.covariance is not None

    @property
    def se(self) -> np.ndarray:
        if self.covariance is None:
            raise NumericalError("covariance is unavailable for this fit")
        diag = np.diag(self.covariance)
        if np.any(diag < 0):
            raise NumericalError("negative variance in ZIP covariance")
        return np.sqrt(diag)

    @property
    def count_se(self) -> np.ndarray:
        return self.se[: self.count_beta.shape[0]]


def zero_design(X, spec="full"):
    """Zero-model design: ``"full"`` reuses X, ``"intercept"`` is a ones column."""
    if isinstance(spec, str):
        if spec == "full":
            return X.copy()
        if spec == "intercept":
            return np.ones((X.shape[0], 1))
        raise InputError(f"unknown zero-model spec {spec!r}; use 'full' or 'intercept'")
    Z = _design(spec)
    if Z.shape[0] != X.shape[0]:
        raise InputError("zero-model design has a different number of rows")
    return Z


def _split(theta, p):
    return theta[:p], theta[p:]


def zip_loglik(theta, X, Z, y) -> float:
    beta, gamma = _split(theta, X.shape[1])
    eta = X @ beta
    zeta = Z @ gamma
    mu = np.exp(eta)
    zero = y == 0
    # log(pi + (1-pi) e^-mu) and log(1-pi) via stable softplus forms
    log1m_pi = -np.logaddexp(0.0, zeta)
    ll_zero = np.logaddexp(zeta, -mu) + log1m_pi
    ll_pos = log1m_pi + y * eta - mu - gammaln(y + 1.0)
    return float(np.sum(np.where(zero, ll_zero, ll_pos)))


def _posterior(mu, zeta, zero):
    # pi/(pi + (1-pi) e^-mu) = expit(zeta + mu) on zeros, 0 elsewhere
    return np.where(zero, expit(zeta + mu), 0.0)


def zip_score(theta, X, Z, y) -> np.ndarray:
    """Analytic gradient of :func:`zip_loglik` (sum scale)."""
    p = X.shape[1]
    beta, gamma = _split(theta, p)
    eta = X @ beta
    zeta = Z @ gamma
    mu = np.exp(eta)
    w = _posterior(mu, zeta, y == 0)
    pi = expit(zeta)
    return np.concatenate([X.T @ (y - (1.0 - w) * mu), Z.T @ (w - pi)])


def zip_hessian(theta, X, Z, y) -> np.ndarray:
    """Analytic Hessian of :func:`zip_loglik`."""
    p = X.shape[1]
    beta, gamma = _split(theta, p)
    eta = X @ beta
    zeta = Z @ gamma
    mu = np.exp(eta)
    zero = y == 0
    w = _posterior(mu, zeta, zero)
    pi = expit(zeta)
    h_bb = np.where(zero, (1.0 - w) * mu * (w * mu - 1.0), -mu)
    h_bg = np.where(zero, w * (1.0 - w) * mu, 0.0)
    h_gg = np.where(zero, w * (1.0 - w), 0.0) - pi * (1.0 - pi)
    top = np.hstack([(X * h_bb[:, None]).T @ X, (X * h_bg[:, None]).T @ Z])
    bottom = np.hstack([(Z * h_bg[:, None]).T @ X, (Z * h_gg[:, None]).T @ Z])
    return np.vstack([top, bottom])


def zip_covariance(fit: ZipFitResult, X, Z, y, step=1e-5) -> np.ndarray:
    """Inverse observed information from central differences of the score."""
    X = _design(X)
    Z = _design(Z)
    y = np.asarray(y, dtype=float)
    theta = fit.params
    k = theta.shape[0]
    H = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = step
        H[:, j] = (zip_score(theta + e, X, Z, y) - zip_score(theta - e, X, Z, y)) / (2 * step)
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("observed information is singular") from exc
    if not np.all(np.isfinite(cov)):
        raise NumericalError("observed information inverse is not finite")
    return 0.5 * (cov + cov.T)


def _initial_values(X, Z, y):
    try:
        beta = fit_poisson(X, y).beta_hat
    except NumericalError:
        beta = np.zeros(X.shape[1])
        beta[0] = np.log(y.mean())
    gamma = 0.5 * fit_logistic(Z, (y == 0).astype(float))
    return beta, gamma


def _newton_polish(theta, X, Z, y, ll, max_steps=25, tol=1e-11):
    n = y.shape[0]
    path = []
    for _ in range(max_steps):
        g = zip_score(theta, X, Z, y)
        if np.max(np.abs(g)) / n < tol:
            break
        H = zip_hessian(theta, X, Z, y)
        try:
            with warnings.catch_warnings():
                # near-flat zero parts are caught by the line search below
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                step = scipy.linalg.solve(-H, g, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            break
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        for _ in range(30):
            cand = theta + t * step
            ll_c = zip_loglik(cand, X, Z, y)
            if np.isfinite(ll_c) and ll_c >= ll:
                break
            t *= 0.5
        else:
            break
        if ll_c == ll and np.max(np.abs(t * step)) < 1e-14:
            break
        theta, ll = cand, ll_c
        path.append(ll)
    return theta, ll, path


def fit_zip(X, y, zero_spec="full", max_iter=500, ll_tol=1e-9, param_tol=1e-7,
            score_tol=1e-6, covariance=True, labels=None) -> ZipFitResult:
    """Fit a ZIP regression by EM.

    Parameters
    ----------
    X : array-like or DesignMatrix
        Count-model design (intercept first).
    y : array-like
        Nonnegative integer outcomes.
    zero_spec : {"full", "intercept"} or array-like
        Zero-model design. ``"full"`` uses the same columns as ``X``.
    covariance : bool
        Compute the observed-information covariance. A singular information
        matrix leaves ``covariance=None`` instead of failing the fit.

    Raises
    ------
    InputError
        No zero outcomes (use a plain Poisson fit) or no positive outcomes.
    ConvergenceError
        The EM tolerances were not met within ``max_iter`` iterations.
    """
    labels = tuple(labels) if labels else tuple(getattr(X, "labels", ())) or None
    X = _design(X)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    Z = zero_design(X, zero_spec)
    q = Z.shape[1]
    if y.shape[0] != n:
        raise InputError(f"design has {n} rows but y has {y.shape[0]} entries")
    if n < p + q:
        raise InputError(f"need n >= p + q, got n={n}, p+q={p + q}")
    if np.any(y < 0) or not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
        raise InputError("outcomes must be nonnegative integers")
    zero = y == 0
    if not np.any(zero):
        raise InputError("no zero outcomes: the ZIP model is not identified; fit a plain Poisson model")
    if np.all(zero):
        raise InputError("all outcomes are zero; the count part is not identified")
    labels = labels or default_labels(p)
    check_rank(X, labels)
    zlabels = labels if isinstance(zero_spec, str) and zero_spec == "full" else default_labels(q)[:q]
    if q == 1:
        zlabels = ("(Intercept)",)
    check_rank(Z, zlabels)

    beta, gamma = _initial_values(X, Z, y)
    theta = np.concatenate([beta, gamma])
    ll = zip_loglik(theta, X, Z, y)
    path = [ll]
    em_converged = False
    boundary = False
    stalled = 0
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(X @ beta)
        w = _posterior(mu, Z @ gamma, zero)
        w[zero] = np.clip(w[zero], WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP)

        beta_new = irls_poisson(X, y, weights=1.0 - w, beta_init=beta, max_iter=50,
                                ll_tol=1e-13, grad_tol=1e-11)[0]
        gamma_new = fit_logistic(Z, w, beta_init=gamma)
        theta_new = np.concatenate([beta_new, gamma_new])
        ll_new = zip_loglik(theta_new, X, Z, y)
        if not np.isfinite(ll_new):
            raise NumericalError("ZIP log-likelihood became non-finite during EM")

        rel = abs(ll_new - ll) / max(abs(ll), 1.0)
        beta_prev = beta
        dpar = float(np.max(np.abs(theta_new - theta)))
        beta, gamma, theta, ll = beta_new, gamma_new, theta_new, ll_new
        path.append(ll)
        if rel < ll_tol and dpar < param_tol:
            em_converged = True
            break
        stalled = stalled + 1 if rel < ll_tol else 0
        if stalled == STALL_HANDOFF or it % HANDOFF_EVERY == 0:
            # Weakly identified zero parts give EM a slow linear tail, either
            # flat in the likelihood or creeping; Newton finishes the job.
            cand, ll_c, extra = _newton_polish(theta, X, Z, y, ll)
            if (float(np.max(np.abs(zip_score(cand, X, Z, y)))) / n < score_tol
                    and np.all(np.linalg.eigvalsh(zip_hessian(cand, X, Z, y)) < 0)):
                theta, ll = cand, ll_c
                beta, gamma = _split(theta, p)
                path.extend(extra)
                em_converged = True
                break
        # No excess zeros: the zero part walks off to pi = 0 and gamma never
        # settles, but the count part and the likelihood do.
        if (rel < ll_tol and float(np.max(np.abs(beta_new - beta_prev))) < param_tol
                and float(np.max(expit(Z @ gamma))) < BOUNDARY_PI):
            em_converged = boundary = True
            break

    if not em_converged:
        raise ConvergenceError(f"EM did not converge in {max_iter} iterations",
                               last_iterate=theta, iterations=it)

    if not boundary:
        theta, ll, polish_path = _newton_polish(theta, X, Z, y, ll)
        path.extend(polish_path)
        boundary = float(np.max(expit(Z @ _split(theta, p)[1]))) < BOUNDARY_PI
    score_norm = float(np.max(np.abs(zip_score(theta, X, Z, y)))) / n
    if score_norm >= score_tol:
        raise ConvergenceError(f"EM stopped with score max-norm {score_norm:.3g}",
                               last_iterate=theta, iterations=it)

    beta, gamma = _split(theta, p)
    fit = ZipFitResult(
        count_beta=beta, zero_gamma=gamma, covariance=None, log_likelihood=ll,
        em_iterations=it, converged=True, score_norm=score_norm,
        count_labels=labels, zero_labels=zlabels, loglik_path=tuple(path),
        boundary=boundary,
    )
    if covariance:
        try:
            cov = zip_covariance(fit, X, Z, y)
        except NumericalError:
            cov = None
        fit = ZipFitResult(**{**fit.__dict__, "covariance": cov})
    return fit
