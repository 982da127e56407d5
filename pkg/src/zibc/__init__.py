"""Zero-inflation bias correction for aggregate-data meta-analysis of count outcomes."""

from .correction import (
    CorrectionResult,
    StudySummary,
    ZeroRateSolution,
    correct_intercept,
    correct_study,
    delta1,
    solve_zero_rate,
)
from .distributions import DesignMatrix, ZipParams, poisson_log_pmf, zip_log_pmf
from .meta import MetaResult, StudyEffect, pool_random_effects
from .poisson import FitResult, fit_poisson
from .zip_em import ZipFitResult, fit_zip

__version__ = "0.1.0"

__all__ = [
    "CorrectionResult",
    "DesignMatrix",
    "FitResult",
    "MetaResult",
    "StudyEffect",
    "StudySummary",
    "ZeroRateSolution",
    "ZipFitResult",
    "ZipParams",
    "correct_intercept",
    "correct_study",
    "delta1",
    "fit_poisson",
    "fit_zip",
    "pool_random_effects",
    "poisson_log_pmf",
    "solve_zero_rate",
    "zip_log_pmf",
]
