"""Command-line entry point: ``zibc {correct,fit,simulate,meta}``.

Exit codes: 0 success, 2 input-contract failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import tables
from .correction import correct_study
from .distributions import DesignMatrix
from .errors import DegenerateArmError, InputError, NumericalError, ZibcError
from .forest import render_svg, render_text
from .meta import StudyEffect, forest_rows, pool_random_effects
from .poisson import fit_poisson
from .simulation import SimScenario, run_replications, scenario_gammas, summarize, sweep
from .zip_em import fit_zip

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _emit(args, name, payload_rows=None, payload_json=None, extra=None):
    """Print the main report and write it (plus ``extra`` files) to --out-dir."""
    text = tables.dumps_json(payload_json) if args.format == "json" else tables.write_csv(payload_rows)
    sys.stdout.write(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.{args.format}").write_text(text, encoding="utf-8")
        for fname, content in (extra or {}).items():
            (out / fname).write_text(content, encoding="utf-8")


def _pooled_rows(pooled: dict) -> list[dict]:
    rows = []
    for method, m in pooled.items():
        d = m.to_dict()
        d.pop("weights")
        rows.append({"method": method or "effects", **d})
    return rows


def _forest_files(effects_by_method: dict, pooled: dict, title: str) -> dict:
    panels = {m: forest_rows(effects_by_method[m], pooled[m]) for m in effects_by_method}
    return {"forest.svg": render_svg(panels, title), "forest.txt": render_text(panels, title)}


def cmd_correct(args) -> int:
    summaries = tables.read_study_table(args.input)
    rows, results, skipped = [], [], []
    for s in summaries:
        try:
            res = correct_study(s)
        except DegenerateArmError as exc:
            _warn(f"{args.input}: {exc}; row skipped")
            rows.append(tables.correction_row(s, None, status=f"skipped: {exc}"))
            skipped.append({"study_id": s.study_id, "arm": exc.arm, "reason": str(exc)})
            continue
        if res.clamped:
            _warn(f"{args.input}: study {s.study_id!r}: no excess zeros in "
                  f"{'control' if res.control.clamped else 'treated'} arm; zero rate clamped to 0")
        results.append((s, res))
        rows.append(tables.correction_row(s, res))

    report = {"input": str(args.input), "studies": rows, "skipped": skipped}
    extra = {}
    if args.pool and results:
        eff = {
            "zibc": [StudyEffect(s.study_id, r.beta1_zibc, r.se1, "zibc") for s, r in results],
            "conventional": [StudyEffect(s.study_id, s.beta1_cv, s.se1_cv, "conventional")
                             for s, r in results],
        }
        pooled = {m: pool_random_effects(v) for m, v in eff.items()}
        report["pooled"] = {m: p.to_dict() for m, p in pooled.items()}
        extra.update(_forest_files(eff, pooled, "Zero-inflation bias correction"))
        if args.format == "csv":
            extra["pooled.csv"] = tables.write_csv(_pooled_rows(pooled))
    _emit(args, "correction", rows, report, extra)
    return EXIT_OK


def cmd_fit(args) -> int:
    covs = [c for c in (args.covariates or "").split(",") if c.strip()]
    y, treat, cov, names = tables.read_ipd(args.input, covs)
    offsets = cov.mean(axis=0) if cov.size else np.zeros(0)
    cov_c = cov - offsets
    single_arm = bool(np.all(treat == treat[0]))
    if single_arm:
        X = np.column_stack([np.ones_like(y), cov_c]) if cov.size else np.ones((y.size, 1))
        labels = ("(Intercept)", *names)
    else:
        dm = DesignMatrix.from_columns(treat, cov_c if cov.size else None, names)
        X, labels = dm.values, dm.labels

    report = {"input": str(args.input), "model": args.model, "n": int(y.size),
              "single_arm": single_arm,
              "centering": {n: float(o) for n, o in zip(names, offsets)}}
    coef_rows = []
    if args.model == "poisson":
        fit = fit_poisson(X, y, labels=labels)
        se = fit.se if fit.converged else np.full(len(labels), np.nan)
        for lab, b, s in zip(labels, fit.beta_hat, se):
            coef_rows.append({"part": "count", "term": lab, "estimate": float(b), "se": float(s)})
        report.update(log_likelihood=fit.log_likelihood, iterations=fit.iterations,
                      converged=fit.converged, gradient_norm=fit.gradient_norm)
    else:
        fit = fit_zip(X, y, zero_spec=args.zero_model, labels=labels)
        se = fit.se if fit.covariance is not None else np.full(fit.params.size, np.nan)
        parts = [("count", lab) for lab in fit.count_labels] + [("zero", lab) for lab in fit.zero_labels]
        for (part, lab), b, s in zip(parts, fit.params, se):
            coef_rows.append({"part": part, "term": lab, "estimate": float(b), "se": float(s)})
        Z = X if args.zero_model == "full" else np.ones((y.size, 1))
        pi = 1.0 / (1.0 + np.exp(-(Z @ fit.zero_gamma)))
        mu = np.exp(X @ fit.count_beta)
        report.update(log_likelihood=fit.log_likelihood, em_iterations=fit.em_iterations,
                      converged=fit.converged, score_norm=fit.score_norm,
                      covariance_available=fit.covariance is not None,
                      mean_pi=float(pi.mean()), mean_mu=float(mu.mean()))
    report["coefficients"] = coef_rows
    _emit(args, f"fit_{args.model}", coef_rows, report)
    return EXIT_OK


def cmd_simulate(args) -> int:
    kwargs, grid = tables.read_scenario(args.scenario)
    kwargs["seed"] = args.seed
    if args.reps is not None:
        kwargs["replications"] = args.reps
    scenarios = sweep(SimScenario(**kwargs), **grid)
    calibrations = [scenario_gammas(s)[1] for s in scenarios]

    reports, designated = [], None
    for sc, cal in zip(scenarios, calibrations):
        reps, _ = run_replications(sc, workers=args.workers, calibration=cal)
        reports.append(summarize(sc, reps, cal))
        if designated is None:
            if not 0 <= args.plot_rep < len(reps):
                raise InputError(f"--plot-rep {args.plot_rep} outside 0..{len(reps) - 1}")
            designated = reps[args.plot_rep]

    rows = [r for rep in reports for r in rep.summary_rows()]
    study_averages = [{"beta1": r.scenario.beta[1], "gamma1": r.scenario.gamma1,
               "zero_rate": r.scenario.target_zero_rate, **r.study_averages} for r in reports]
    payload = {"reports": [r.to_dict() for r in reports]}
    extra = {"study_averages.csv": tables.write_csv(study_averages)}
    if designated is not None and designated.effects:
        eff_rows = [row for m in ("true", "zibc", "conventional")
                    for row in tables.effect_rows(designated.effects[m])]
        extra["effects.csv"] = tables.write_csv(eff_rows)
        title = f"Replication {designated.rep_index} of scenario 1"
        extra.update(_forest_files(designated.effects, designated.meta, title))
    for rep in reports:
        if rep.n_flagged:
            _warn(f"{rep.n_flagged} replication(s) flagged: {list(rep.flagged_reps)[:10]}")
    _emit(args, "report", rows, payload, extra)
    return EXIT_OK


def cmd_meta(args) -> int:
    effects = tables.read_effects_table(args.input)
    if not effects:
        raise InputError(f"{args.input}: no data rows")
    groups: dict[str, list[StudyEffect]] = {}
    for e in effects:
        groups.setdefault(e.method_label, []).append(e)
    pooled = {m: pool_random_effects(v) for m, v in groups.items()}
    payload = {"input": str(args.input),
               "pooled": {(m or "effects"): p.to_dict() for m, p in pooled.items()}}
    extra = _forest_files(groups, pooled, "Random-effects meta-analysis")
    _emit(args, "meta", _pooled_rows(pooled), payload, extra)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zibc", description="Zero-inflation bias correction for Poisson treatment effects.",
        epilog="Exit codes: 0 success, 2 input error, 3 numerical failure.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", help="directory for report and plot files")
        p.add_argument("--format", choices=("csv", "json"), default="json")

    p = sub.add_parser("correct", help="correct Poisson effects from aggregate study data")
    p.add_argument("input", help="study table CSV")
    p.add_argument("--pool", action="store_true", help="pool corrected effects (DerSimonian-Laird)")
    common(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("fit", help="fit Poisson or ZIP regression to individual data")
    p.add_argument("input", help="IPD CSV with columns y, treat and covariates")
    p.add_argument("--model", choices=("poisson", "zip"), default="poisson")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--zero-model", choices=("full", "intercept"), default="full")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo scenario file")
    p.add_argument("scenario", help="JSON or key=value scenario file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--reps", type=int, help="override the replication count")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plot-rep", type=int, default=0, help="replication shown in the forest plot")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("meta", help="pool a CSV of study effects")
    p.add_argument("input", help="CSV with study_id, effect, se[, method]")
    common(p)
    p.set_defaults(func=cmd_meta)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, ZibcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
