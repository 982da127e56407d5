"""CSV/JSON readers and writers for study tables, effects, IPD and scenarios."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from .correction import CorrectionResult, StudySummary
from .errors import InputError
from .meta import METHODS, StudyEffect
from .simulation import SimScenario

STUDY_FIELDS = ("study_id", "n_c", "n_t", "ybar_c", "ybar_t", "p0_c", "p0_t", "beta1_cv", "se1_cv")
EFFECT_FIELDS = ("study_id", "effect", "se")


class RowError(InputError):
    def __init__(self, path, row, field, problem):
        self.path, self.row, self.field = str(path), row, field
        where = f"{path}"
        if row is not None:
            where += f": row {row}"
        if field is not None:
            where += f": field {field!r}"
        super().__init__(f"{where}: {problem}")


def _open_rows(path, required):
    """Yield ``(row_number, {lower_header: value})``; row 1 is the header."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise RowError(path, None, None, f"cannot read file ({exc.strerror})") from exc
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise RowError(path, None, None, "file is empty") from None
    names = [h.strip().lower() for h in header]
    if len(set(names)) != len(names):
        raise RowError(path, 1, None, "duplicate column names")
    for name in required:
        if name not in names:
            raise RowError(path, 1, name, "required column missing")
    rows = []
    for i, raw in enumerate(reader, start=2):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(names):
            raise RowError(path, i, None, f"expected {len(names)} fields, found {len(raw)}")
        rows.append((i, dict(zip(names, (c.strip() for c in raw)))))
    return names, rows


def _number(path, row, field, text):
    try:
        value = float(text)
    except ValueError:
        raise RowError(path, row, field, f"not a decimal number: {text!r}") from None
    if not math.isfinite(value):
        raise RowError(path, row, field, f"not finite: {text!r}")
    return value


def _count(path, row, field, text):
    value = _number(path, row, field, text)
    if value != int(value) or value < 0:
        raise RowError(path, row, field, f"not a nonnegative integer: {text!r}")
    return int(value)


def read_study_table(path) -> list[StudySummary]:
    _, rows = _open_rows(path, STUDY_FIELDS)
    out = []
    for i, rec in rows:
        kw = {"study_id": rec["study_id"]}
        if not kw["study_id"]:
            raise RowError(path, i, "study_id", "empty study identifier")
        for f in ("n_c", "n_t"):
            kw[f] = _count(path, i, f, rec[f]) if rec[f] else None
        for f in ("ybar_c", "ybar_t", "p0_c", "p0_t", "beta1_cv", "se1_cv"):
            kw[f] = _number(path, i, f, rec[f])
        for f in ("p0_c", "p0_t"):
            if not 0.0 <= kw[f] <= 1.0:
                raise RowError(path, i, f, f"proportion outside [0, 1]: {rec[f]!r}")
        for f in ("ybar_c", "ybar_t"):
            if kw[f] < 0:
                raise RowError(path, i, f, "outcome mean must be nonnegative")
        for f in ("n_c", "n_t"):
            if kw[f] is not None and kw[f] < 2:
                raise RowError(path, i, f, "each arm needs at least 2 participants")
        if kw["se1_cv"] <= 0:
            raise RowError(path, i, "se1_cv", "standard error must be positive")
        out.append(StudySummary(**kw))
    return out


def read_effects_table(path) -> list[StudyEffect]:
    names, rows = _open_rows(path, EFFECT_FIELDS)
    has_method = "method" in names
    out = []
    for i, rec in rows:
        effect = _number(path, i, "effect", rec["effect"])
        se = _number(path, i, "se", rec["se"])
        if se <= 0:
            raise RowError(path, i, "se", "standard error must be positive")
        method = rec["method"].lower() if has_method else ""
        if has_method and method not in METHODS:
            raise RowError(path, i, "method", f"expected one of {METHODS}, got {rec['method']!r}")
        out.append(StudyEffect(rec["study_id"], effect, se, method))
    return out


def read_ipd(path, covariates=()):
    """Read ``y``, ``treat`` and the selected covariate columns."""
    covariates = [c.strip().lower() for c in covariates if c.strip()]
    _, rows = _open_rows(path, ("y", "treat", *covariates))
    if not rows:
        raise RowError(path, None, None, "no data rows")
    y, treat, cov = [], [], []
    for i, rec in rows:
        y.append(_count(path, i, "y", rec["y"]))
        t = _number(path, i, "treat", rec["treat"])
        if t not in (0.0, 1.0):
            raise RowError(path, i, "treat", f"treatment must be 0 or 1, got {rec['treat']!r}")
        treat.append(t)
        cov.append([_number(path, i, c, rec[c]) for c in covariates])
    cov_arr = np.array(cov, dtype=float).reshape(len(rows), len(covariates))
    return np.array(y, dtype=float), np.array(treat), cov_arr, covariates


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    if value is None:
        return ""
    return str(value)


def write_csv(rows: list[dict], stream=None) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        header = list(rows[0])
        writer.writerow(header)
        for r in rows:
            writer.writerow([format_value(r.get(h)) for h in header])
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


def correction_row(summary: StudySummary, result: CorrectionResult | None, status="ok") -> dict:
    row = {f: getattr(summary, f) for f in STUDY_FIELDS}
    keys = ("delta1", "pi_c", "pi_t", "mu_c", "mu_t", "beta1_zibc", "se1", "idr", "z", "p_value",
            "clamped_c", "clamped_t")
    if result is None:
        row.update({k: None for k in keys})
    else:
        row.update({
            "delta1": result.delta1_hat,
            "pi_c": result.control.pi_bar,
            "pi_t": result.treated.pi_bar,
            "mu_c": result.control.mu_bar,
            "mu_t": result.treated.mu_bar,
            "beta1_zibc": result.beta1_zibc,
            "se1": result.se1,
            "idr": result.idr,
            "z": result.z_value,
            "p_value": result.p_value,
            "clamped_c": result.control.clamped,
            "clamped_t": result.treated.clamped,
        })
    row["status"] = status
    return row


def effect_rows(effects: list[StudyEffect]) -> list[dict]:
    return [{"study_id": e.study_id, "method": e.method_label, "effect": e.effect, "se": e.se}
            for e in effects]


# Scenario files

_SCENARIO_FIELDS = {f.name: f for f in fields(SimScenario)}
_TUPLE_FIELDS = {"beta", "sample_sizes", "treat_probs"}
_INT_FIELDS = {"k_studies", "replications", "seed", "single_n"}
_STR_FIELDS = {"mode", "zero_model"}
SWEEPABLE = {"beta", "gamma1", "target_zero_rate", "k_studies"}


def _coerce(path, key, value):
    if key not in _SCENARIO_FIELDS:
        raise RowError(path, None, key, "unknown scenario key")
    try:
        if key in _TUPLE_FIELDS:
            if isinstance(value, str):
                value = [v for v in value.replace(";", ",").split(",") if v.strip()]
            conv = int if key == "sample_sizes" else float
            return tuple(conv(float(v)) if conv is int else conv(v) for v in value)
        if key in _INT_FIELDS:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if key in _STR_FIELDS:
            return str(value).strip()
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
            return None
        return float(value)
    except (TypeError, ValueError):
        raise RowError(path, None, key, f"invalid value {value!r}") from None


def _parse_key_values(path, text):
    data = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RowError(path, lineno, None, "expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in data:
            raise RowError(path, lineno, key, "duplicate key")
        data[key] = value
    return data


def read_scenario(path) -> tuple[dict, dict]:
    """Parse a scenario file into ``(SimScenario kwargs, sweep grid)``.

    JSON objects and flat ``key=value`` files are accepted. Sweep axes are
    given as ``sweep_<field>``; in key=value files tuple-valued axes
    separate their items with ``;`` and axis entries with ``|``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RowError(path, None, None, f"cannot read file ({exc.strerror})") from exc
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RowError(path, exc.lineno, None, f"invalid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise RowError(path, None, None, "scenario JSON must be an object")
    else:
        raw = _parse_key_values(path, text)

    kwargs, grid = {}, {}
    for key, value in raw.items():
        if key.startswith("sweep_"):
            axis = key[len("sweep_"):]
            if axis not in SWEEPABLE:
                raise RowError(path, None, key, f"cannot sweep over {axis!r}")
            if isinstance(value, str):
                value = [v for v in value.split("|") if v.strip()] if "|" in value or axis == "beta" \
                    else [v for v in value.split(",") if v.strip()]
            grid[axis] = [_coerce(path, axis, v) for v in value]
        else:
            kwargs[key] = _coerce(path, key, value)
    return kwargs, grid
