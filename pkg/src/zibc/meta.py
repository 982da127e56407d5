"""DerSimonian-Laird random-effects pooling and forest-plot rows."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

Z_95 = 1.96
METHODS = ("true", "conventional", "zibc")


@dataclass(frozen=True)
class StudyEffect:
    study_id: str
    effect: float
    se: float
    method_label: str = ""

    def __post_init__(self):
        if not math.isfinite(self.effect):
            raise InputError(f"study {self.study_id!r}: effect must be finite")
        if not (math.isfinite(self.se) and self.se > 0):
            raise InputError(f"study {self.study_id!r}: se must be positive, got {self.se}")
        if self.method_label and self.method_label not in METHODS:
            raise InputError(f"study {self.study_id!r}: unknown method {self.method_label!r}")


@dataclass(frozen=True)
class MetaResult:
    pooled_effect: float
    pooled_se: float
    tau2: float
    ci_low: float
    ci_high: float
    weights: tuple[float, ...]
    q_statistic: float
    k: int

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "pooled_effect": self.pooled_effect,
            "pooled_se": self.pooled_se,
            "tau2": self.tau2,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "q_statistic": self.q_statistic,
            "k": self.k,
            "weights": list(self.weights),
        }


def pool_arrays(effects, ses) -> MetaResult:
    e = np.asarray(effects, dtype=float)
    s = np.asarray(ses, dtype=float)
    if e.size == 0:
        raise InputError("cannot pool an empty set of studies")
    if e.shape != s.shape:
        raise InputError("effects and standard errors differ in length")
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise InputError("all standard errors must be positive")
    if np.any(~np.isfinite(e)):
        raise InputError("all effects must be finite")

    k = e.size
    w = 1.0 / s**2
    fixed = np.sum(w * e) / np.sum(w)
    q = float(np.sum(w * (e - fixed) ** 2))
    if k > 1:
        denom = np.sum(w) - np.sum(w**2) / np.sum(w)
        tau2 = max(0.0, (q - (k - 1)) / denom) if denom > 0 else 0.0
    else:
        tau2 = 0.0

    w_re = 1.0 / (s**2 + tau2)
    if k == 1:
        pooled, pooled_se = float(e[0]), float(s[0])
    else:
        pooled = float(np.sum(w_re * e) / np.sum(w_re))
        pooled_se = float(1.0 / math.sqrt(np.sum(w_re)))
    return MetaResult(
        pooled_effect=pooled,
        pooled_se=pooled_se,
        tau2=float(tau2),
        ci_low=pooled - Z_95 * pooled_se,
        ci_high=pooled + Z_95 * pooled_se,
        weights=tuple(float(v) for v in w_re / np.sum(w_re)),
        q_statistic=q,
        k=k,
    )


def pool_random_effects(effects: Sequence[StudyEffect]) -> MetaResult:
    """DerSimonian-Laird random-effects pooled estimate of study effects."""
    effects = list(effects)
    if not effects:
        raise InputError("cannot pool an empty set of studies")
    return pool_arrays([s.effect for s in effects], [s.se for s in effects])


@dataclass(frozen=True)
class ForestRow:
    label: str
    effect: float
    ci_low: float
    ci_high: float
    weight: float | None
    summary: bool = False


def forest_rows(effects: Iterable[StudyEffect], meta: MetaResult,
                summary_label="RE Model") -> list[ForestRow]:
    effects = list(effects)
    if len(effects) != meta.k:
        raise InputError(f"{len(effects)} effects but the pooled result has k={meta.k}")
    rows = [
        ForestRow(s.study_id, s.effect, s.effect - Z_95 * s.se, s.effect + Z_95 * s.se, wt)
        for s, wt in zip(effects, meta.weights)
    ]
    rows.append(ForestRow(summary_label, meta.pooled_effect, meta.ci_low, meta.ci_high,
                          1.0, summary=True))
    return rows
