"""Monte Carlo harness comparing ZIP, Poisson and corrected-Poisson pooling.

Each trial is generated from

    logit(pi) = g0 + g1 * treat + g2 * cov,    g2 = ratio * g0 (default 1/2)
    log(mu)   = b0 + b1 * treat + b2 * cov,    cov ~ N(0, 1)

with ``g0`` calibrated so the expected overall zero fraction hits a target.
Random streams are Philox generators keyed by (seed, replication, study), so
results do not depend on execution order or worker count.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import brentq
from scipy.special import expit

from .correction import CorrectionResult, correct_study, summarize_arms
from .errors import CalibrationError, InputError, ZibcError
from .meta import METHODS, MetaResult, StudyEffect, pool_random_effects
from .poisson import fit_poisson
from .zip_em import fit_zip

log = logging.getLogger(__name__)

GAMMA0_BRACKET = (-20.0, 20.0)


def study_rng(seed: int, rep_index: int, study_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(rep_index, study_index))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimScenario:
    k_studies: int = 10
    beta: tuple[float, float, float] = (0.9, -0.2, 0.25)
    gamma1: float = 0.5
    target_zero_rate: float = 0.4
    sample_sizes: tuple[int, ...] | None = None
    treat_probs: tuple[float, ...] | None = None
    replications: int = 100
    seed: int = 0
    mode: str = "meta"
    single_n: int = 400
    single_p_t: float = 0.5
    gamma2_ratio: float = 0.5
    gamma0: float | None = None
    zero_model: str = "full"

    def __post_init__(self):
        if self.mode not in ("meta", "single"):
            raise InputError(f"mode must be 'meta' or 'single', got {self.mode!r}")
        if len(self.beta) != 3:
            raise InputError("beta must have three entries (b0, b1, b2)")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.gamma0 is None and not 0.0 < self.target_zero_rate < 1.0:
            raise InputError("target_zero_rate must lie in (0, 1)")
        if self.k_studies < 1 or self.replications < 1:
            raise InputError("k_studies and replications must be positive")
        if self.zero_model not in ("full", "intercept"):
            raise InputError("zero_model must be 'full' or 'intercept'")
        k = self.n_studies
        if self.sample_sizes is not None:
            sizes = tuple(int(v) for v in self.sample_sizes)
            if len(sizes) != k or min(sizes) < 10:
                raise InputError(f"sample_sizes must list {k} sizes of at least 10")
            object.__setattr__(self, "sample_sizes", sizes)
        if self.treat_probs is not None:
            probs = tuple(float(v) for v in self.treat_probs)
            if not all(0.0 < v < 1.0 for v in probs):
                raise InputError("treat_probs must lie in (0, 1)")
            object.__setattr__(self, "treat_probs", probs)

    @property
    def n_studies(self) -> int:
        return 1 if self.mode == "single" else self.k_studies

    def study_plan(self) -> list[tuple[int, float]]:
        """(n, p_t) per study: sizes 200 then 400 by halves, p_t cycling 0.4/0.5/0.6."""
        if self.mode == "single":
            p = self.treat_probs[0] if self.treat_probs else self.single_p_t
            return [(self.single_n, p)]
        k = self.k_studies
        sizes = self.sample_sizes or tuple(200 if i < k // 2 else 400 for i in range(k))
        cycle = self.treat_probs or (0.4, 0.5, 0.6)
        return [(sizes[i], cycle[i % len(cycle)]) for i in range(k)]

    def calibration_p_t(self) -> float:
        plan = self.study_plan()
        return sum(n * p for n, p in plan) / sum(n for n, _ in plan)


@dataclass(frozen=True)
class GammaCalibration:
    gamma0: float
    gamma2: float
    achieved_zero_rate: float
    quadrature_error: float


def expected_zero_rate(gamma0, gamma1, beta, p_t, gamma2_ratio=0.5, nodes=64) -> float:
    """E[pi + (1 - pi) exp(-mu)] over cov ~ N(0,1) and treat ~ Bernoulli(p_t)."""
    x, w = hermgauss(nodes)
    z = math.sqrt(2.0) * x
    w = w / math.sqrt(math.pi)
    total = 0.0
    for t, pw in ((0.0, 1.0 - p_t), (1.0, p_t)):
        pi = expit(gamma0 + gamma1 * t + gamma2_ratio * gamma0 * z)
        mu = np.exp(beta[0] + beta[1] * t + beta[2] * z)
        total += pw * float(np.sum(w * (pi + (1.0 - pi) * np.exp(-mu))))
    return total


def calibrate_gamma0(target_zero_rate, gamma1, beta, p_t, gamma2_ratio=0.5,
                     nodes=64) -> GammaCalibration:
    if not 0.0 < target_zero_rate < 1.0:
        raise InputError("target zero rate must lie in (0, 1)")

    def gap(g0):
        return expected_zero_rate(g0, gamma1, beta, p_t, gamma2_ratio, nodes) - target_zero_rate

    lo, hi = GAMMA0_BRACKET
    f_lo, f_hi = gap(lo), gap(hi)
    if f_lo * f_hi > 0:
        attainable = (f_lo + target_zero_rate, f_hi + target_zero_rate)
        raise CalibrationError(
            f"target zero rate {target_zero_rate} is outside the attainable range "
            f"[{min(attainable):.4f}, {max(attainable):.4f}] for gamma0 in {GAMMA0_BRACKET}",
            attainable=attainable)
    g0 = brentq(gap, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    achieved = expected_zero_rate(g0, gamma1, beta, p_t, gamma2_ratio, nodes)
    finer = expected_zero_rate(g0, gamma1, beta, p_t, gamma2_ratio, 2 * nodes)
    return GammaCalibration(g0, gamma2_ratio * g0, achieved, abs(achieved - finer))


def scenario_gammas(scenario: SimScenario, calibration: GammaCalibration | None = None):
    if scenario.gamma0 is not None:
        g0 = scenario.gamma0
        return (g0, scenario.gamma1, scenario.gamma2_ratio * g0), None
    cal = calibration or calibrate_gamma0(
        scenario.target_zero_rate, scenario.gamma1, scenario.beta,
        scenario.calibration_p_t(), scenario.gamma2_ratio)
    return (cal.gamma0, scenario.gamma1, cal.gamma2), cal


@dataclass(frozen=True)
class StudyData:
    y: np.ndarray
    treat: np.ndarray
    cov: np.ndarray
    cov_offset: float
    pi: np.ndarray

    def design(self) -> np.ndarray:
        return np.column_stack([np.ones_like(self.cov), self.treat, self.cov])


def generate_study(n, p_t, beta, gamma, rng: np.random.Generator) -> StudyData:
    """Draw one trial; the returned covariate is centred at its sample mean."""
    treat = (rng.random(n) < p_t).astype(float)
    cov = rng.standard_normal(n)
    pi = expit(gamma[0] + gamma[1] * treat + gamma[2] * cov)
    mu = np.exp(beta[0] + beta[1] * treat + beta[2] * cov)
    structural = rng.random(n) < pi
    counts = rng.poisson(mu)
    y = np.where(structural, 0, counts).astype(float)
    offset = float(cov.mean())
    return StudyData(y=y, treat=treat, cov=cov - offset, cov_offset=offset, pi=pi)


@dataclass(frozen=True)
class StudyRecord:
    study_index: int
    n: int
    p_t: float
    beta1_cv: float
    se1_cv: float
    beta1_mle: float
    se1_mle: float
    correction: CorrectionResult
    true_pi_t: float
    true_pi_c: float


def analyze_study(data: StudyData, study_index=0, p_t=float("nan"), zero_model="full"):
    X = data.design()
    cv = fit_poisson(X, data.y)
    if not cv.converged:
        raise ZibcError("Poisson fit did not converge")
    zf = fit_zip(X, data.y, zero_spec=zero_model)
    if zf.covariance is None:
        raise ZibcError("ZIP covariance unavailable")
    se_cv = cv.se
    summary = summarize_arms(data.y, data.treat, cv.beta_hat[1], se_cv[1], study_id=study_index + 1)
    corr = correct_study(summary)
    treat = data.treat.astype(bool)
    return StudyRecord(
        study_index=study_index, n=int(data.y.size), p_t=p_t,
        beta1_cv=float(cv.beta_hat[1]), se1_cv=float(se_cv[1]),
        beta1_mle=float(zf.count_beta[1]), se1_mle=float(zf.count_se[1]),
        correction=corr,
        true_pi_t=float(data.pi[treat].mean()), true_pi_c=float(data.pi[~treat].mean()),
    )


@dataclass(frozen=True)
class Replication:
    rep_index: int
    studies: tuple[StudyRecord, ...]
    failures: tuple[tuple[int, str], ...]
    effects: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.failures)


def method_effects(records) -> dict[str, list[StudyEffect]]:
    out = {m: [] for m in METHODS}
    for r in records:
        sid = f"Study {r.study_index + 1}"
        out["true"].append(StudyEffect(sid, r.beta1_mle, r.se1_mle, "true"))
        out["conventional"].append(StudyEffect(sid, r.beta1_cv, r.se1_cv, "conventional"))
        out["zibc"].append(StudyEffect(sid, r.correction.beta1_zibc, r.correction.se1, "zibc"))
    return out


def run_replication(scenario: SimScenario, rep_index: int,
                    calibration: GammaCalibration | None = None) -> Replication:
    gamma, _ = scenario_gammas(scenario, calibration)
    records, failures = [], []
    for s, (n, p_t) in enumerate(scenario.study_plan()):
        data = generate_study(n, p_t, scenario.beta, gamma, study_rng(scenario.seed, rep_index, s))
        try:
            records.append(analyze_study(data, s, p_t, scenario.zero_model))
        except ZibcError as exc:
            log.warning("replication %d study %d failed: %s", rep_index, s + 1, exc)
            failures.append((s, str(exc)))
    effects, meta = {}, {}
    if records:
        effects = method_effects(records)
        meta = {m: pool_random_effects(v) for m, v in effects.items()}
    return Replication(rep_index, tuple(records), tuple(failures), effects, meta)


@dataclass(frozen=True)
class MethodSummary:
    coverage: float
    mse: float
    bias: float
    mean_effect: float
    mean_pooled_se: float


@dataclass(frozen=True)
class SimReport:
    scenario: SimScenario
    calibration: GammaCalibration | None
    n_replications: int
    n_flagged: int
    flagged_reps: tuple[int, ...]
    methods: dict
    aprd_cv: float
    aprd_zibc: float
    study_averages: dict

    def to_dict(self) -> dict:
        sc = asdict(self.scenario)
        return {
            "scenario": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sc.items()},
            "calibration": asdict(self.calibration) if self.calibration else None,
            "n_replications": self.n_replications,
            "n_flagged": self.n_flagged,
            "flagged_reps": list(self.flagged_reps),
            "methods": {m: asdict(s) for m, s in self.methods.items()},
            "aprd": {"conventional": self.aprd_cv, "zibc": self.aprd_zibc},
            "study_averages": dict(self.study_averages),
        }

    def summary_rows(self) -> list[dict]:
        rows = []
        for m, s in self.methods.items():
            rows.append({
                "beta1": self.scenario.beta[1],
                "gamma1": self.scenario.gamma1,
                "zero_rate": self.scenario.target_zero_rate,
                "method": m,
                "coverage": s.coverage,
                "mse": s.mse,
                "bias": s.bias,
                "mean_effect": s.mean_effect,
                "mean_pooled_se": s.mean_pooled_se,
                "aprd": 0.0 if m == "true" else (self.aprd_cv if m == "conventional" else self.aprd_zibc),
            })
        return rows


def _rep_task(args):
    scenario, rep, calibration = args
    return run_replication(scenario, rep, calibration)


def run_replications(scenario: SimScenario, workers: int = 1, calibration=None):
    _, calibration = scenario_gammas(scenario, calibration)
    tasks = [(scenario, r, calibration) for r in range(scenario.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_rep_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        reps = [_rep_task(t) for t in tasks]
    reps.sort(key=lambda r: r.rep_index)
    return reps, calibration


def summarize(scenario: SimScenario, reps, calibration=None) -> SimReport:
    beta1 = scenario.beta[1]
    good = [r for r in reps if not r.flagged]
    flagged = tuple(r.rep_index for r in reps if r.flagged)
    nan = float("nan")
    methods = {}
    for m in METHODS:
        if good:
            est = np.array([r.meta[m].pooled_effect for r in good])
            ses = np.array([r.meta[m].pooled_se for r in good])
            cover = np.array([r.meta[m].covers(beta1) for r in good], dtype=float)
            methods[m] = MethodSummary(float(cover.mean()), float(np.mean((est - beta1) ** 2)),
                                       float(est.mean() - beta1), float(est.mean()), float(ses.mean()))
        else:
            methods[m] = MethodSummary(nan, nan, nan, nan, nan)
    se_true = methods["true"].mean_pooled_se
    aprd_cv = abs(methods["conventional"].mean_pooled_se - se_true) / se_true
    aprd_zibc = abs(methods["zibc"].mean_pooled_se - se_true) / se_true

    studies = [s for r in good for s in r.studies]
    if studies:
        col = lambda f: float(np.mean([f(s) for s in studies]))  # noqa: E731
        study_averages = {
            "delta1_zibc": col(lambda s: s.correction.delta1_hat),
            "delta1_empirical": col(lambda s: s.beta1_mle - s.beta1_cv),
            "pi_t": col(lambda s: s.correction.treated.pi_bar),
            "pi_c": col(lambda s: s.correction.control.pi_bar),
            "true_pi_t": col(lambda s: s.true_pi_t),
            "true_pi_c": col(lambda s: s.true_pi_c),
            "beta1_cv": col(lambda s: s.beta1_cv),
            "beta1_mle": col(lambda s: s.beta1_mle),
            "beta1_zibc": col(lambda s: s.correction.beta1_zibc),
            "n_studies": len(studies),
        }
    else:
        study_averages = {}
    return SimReport(scenario, calibration, len(reps), len(flagged), flagged,
                     methods, aprd_cv, aprd_zibc, study_averages)


def run_simulation(scenario: SimScenario, workers: int = 1) -> SimReport:
    reps, calibration = run_replications(scenario, workers)
    return summarize(scenario, reps, calibration)


def sweep(base: SimScenario, **grid) -> list[SimScenario]:
    """Cartesian product of scenario overrides, in argument order."""
    scenarios = [base]
    for key, values in grid.items():
        scenarios = [replace(s, **{key: v}) for s in scenarios for v in values]
    return scenarios
