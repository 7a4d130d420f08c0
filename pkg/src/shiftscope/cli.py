"""Command-line interface.

Subcommands: ``synth``, ``train``, ``detect``, ``attribute``, ``experiment``.
Any flag may also come from a ``key=value`` file given with ``--config``;
explicit flags win.  ``SHIFTSCOPE_SEED`` is the seed when neither supplies
one.

Exit codes: 0 success / ID verdict, 1 usage error, 2 data error,
3 OOD verdict (``detect`` only).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import detector as det
from .models import load_model, load_schema, predict, save_model
from .shapley import explain_dataset
from .stats import BootstrapSpec, ks_two_sample, wasserstein1
from .tabular import (DataError, ShiftScenario, TabularDataset, generate_scenario, load_csv,
                      read_key_value, save_csv, scenario_from_config)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_OOD = 0, 1, 2, 3
RUN_SCHEMA_VERSION = 1
DISTINCT_P = 0.05
DESK_N = 20_000
PAPER_N = 50_000
EXPERIMENTS = ("table1_multivariate", "table2_uninformative", "table3_prediction_invariant",
               "table4_matrix", "fig2_sensitivity")
FIG2_RHOS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p, seed=True):
    p.add_argument("--config", help="key=value file supplying defaults for any flag")
    if seed:
        p.add_argument("--seed", type=int)


def _add_model_flags(p):
    p.add_argument("--target", help="target column of the reference CSV")
    p.add_argument("--estimator", choices=("gbdt", "linear"), default="gbdt")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)


def _add_detect_flags(p):
    p.add_argument("--reference", required=True)
    p.add_argument("--new", required=True)
    p.add_argument("--model", help="trained model JSON; otherwise trained from --reference")
    _add_model_flags(p)
    p.add_argument("--space", choices=det.SPACES, default="explanation")
    p.add_argument("--l2", type=float, default=det.DEFAULT_L2)
    p.add_argument("--threshold", type=float, default=det.DEFAULT_AUC_THRESHOLD)
    p.add_argument("--out", required=True)


def build_parser():
    parser = _Parser(prog="shiftscope", description="Explanation-shift detection for tabular models")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic reference/shifted pair as CSV")
    _add_common(p)
    p.add_argument("--kind", choices=("multivariate", "uninformative", "swap_uniform", "sensitivity"))
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=0.1)
    p.add_argument("--n", type=int, default=DESK_N)
    p.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    p.add_argument("--scenario", help="key=value scenario file (kind, rho, n, seed, noise_sd)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="fit an estimator on a CSV and save it as JSON")
    _add_common(p)
    p.add_argument("--reference", required=True)
    _add_model_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="run the shift detector; exit 3 on OOD")
    _add_common(p)
    _add_detect_flags(p)

    p = sub.add_parser("attribute", help="bootstrap coefficient attribution")
    _add_common(p)
    _add_detect_flags(p)
    p.add_argument("--bootstraps", type=int, default=1000)
    p.add_argument("--fraction", type=float, default=0.632)

    p = sub.add_parser("experiment", help="reproduce a synthetic experiment")
    _add_common(p)
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    p.add_argument("--n", type=int)
    p.add_argument("--paper-scale", dest="paper_scale", action="store_true")
    p.add_argument("--rho", type=float)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=det.DEFAULT_L2)
    p.add_argument("--threshold", type=float, default=det.DEFAULT_AUC_THRESHOLD)
    p.add_argument("--out", required=True, help="output directory")
    parser.commands = sub.choices
    return parser


def _apply_config(sub, path):
    """Install values from a key=value file as defaults of subparser ``sub``."""
    cfg = read_key_value(path)
    actions = {a.dest: a for a in sub._actions}
    unknown = sorted(set(cfg) - set(actions) - {"config"})
    if unknown:
        raise UsageError(f"unknown keys in {path}: {unknown}")
    defaults = {}
    for key, raw in cfg.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"{path}: invalid value {key}={raw}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"{path}: invalid value {key}={raw}")
        defaults[key] = value
        action.required = False
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        command = next((a for a in argv if a in parser.commands), None)
        if command is None:
            raise UsageError("--config needs a subcommand")
        try:
            _apply_config(parser.commands[command], known.config)
        except OSError as exc:
            raise DataError(f"cannot read config file: {exc}") from None
    args = parser.parse_args(argv)
    if "seed" in vars(args) and args.seed is None:
        env = os.environ.get("SHIFTSCOPE_SEED")
        try:
            args.seed = int(env) if env is not None else 0
        except ValueError:
            raise UsageError(f"SHIFTSCOPE_SEED must be an integer, got {env!r}") from None
    return args


# ---------------------------------------------------------------------------
# helpers


def _dump(doc, path, schema):
    jsonschema.validate(doc, load_schema(schema))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def align_columns(data: TabularDataset, names) -> TabularDataset:
    """Reorder ``data`` to the column order ``names``; missing columns are an error."""
    names = tuple(names)
    missing = [c for c in names if c not in data.feature_names]
    if missing:
        raise DataError(f"{data.name}: missing column(s) {', '.join(missing)}")
    idx = [data.feature_names.index(c) for c in names]
    return TabularDataset(data.features[:, idx], names, data.target, data.name)


def _header(path):
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            return [h.strip() for h in next(csv.reader(fh), [])]
    except OSError:
        return []


def _detector_and_new(args):
    """Detector (from ``--model`` or trained on ``--reference``) and aligned new data."""
    new_target = args.target if args.target and args.target in _header(args.new) else None
    if args.model:
        model = load_model(args.model)
        reference = load_csv(args.reference, args.target)
        names = model.feature_names or reference.feature_names
        detector = det.ExplanationShiftDetector.from_model(
            model, align_columns(reference, names), l2_penalty=args.l2,
            auc_threshold=args.threshold, seed=args.seed)
    else:
        if not args.target:
            raise UsageError("either --model or --target (to train on --reference) is required")
        reference = load_csv(args.reference, args.target)
        names = reference.feature_names
        detector = det.ExplanationShiftDetector(
            estimator=args.estimator, depth=args.depth, n_trees=args.trees,
            learning_rate=args.lr, l2_penalty=args.l2, auc_threshold=args.threshold,
            seed=args.seed).fit(reference)
    return detector, align_columns(load_csv(args.new, new_target), names)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    if args.scenario:
        spec = scenario_from_config(args.scenario)
    else:
        if not args.kind:
            raise UsageError("synth needs --kind or --scenario")
        n = PAPER_N if args.paper_scale and args.n == DESK_N else args.n
        spec = ShiftScenario(args.kind, args.rho, args.noise_sd, n, args.seed)
    ref, new = generate_scenario(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(ref, out / "reference.csv")
    save_csv(new, out / "shifted.csv")
    return EXIT_OK


def cmd_train(args):
    if not args.target:
        raise UsageError("train needs --target")
    data = load_csv(args.reference, args.target)
    model = det.fit_estimator(data, args.estimator, args.depth, args.trees, args.lr)
    save_model(model, args.out)
    return EXIT_OK


def cmd_detect(args):
    detector, new = _detector_and_new(args)
    report = detector.detect(new, args.space)
    doc = report.to_dict()
    doc["config"].update(reference=str(args.reference), new=str(args.new),
                         model=args.model, threshold=args.threshold)
    _dump(doc, args.out, "detector_report")
    return EXIT_OOD if report.verdict == "OOD" else EXIT_OK


def cmd_attribute(args):
    if args.bootstraps < 2:
        raise UsageError("--bootstraps must be at least 2")
    if not 0.0 < args.fraction <= 1.0:
        raise UsageError("--fraction must lie in (0, 1]")
    detector, new = _detector_and_new(args)
    result = detector.attribute(new, BootstrapSpec(args.bootstraps, args.fraction, args.seed),
                                args.space)
    doc = result.to_dict()
    doc["config"] = {"reference": str(args.reference), "new": str(args.new),
                     "model": args.model, "l2_penalty": args.l2}
    _dump(doc, args.out, "drift_attribution")
    sig = result.significant
    band = result.null_band
    rows = []
    for rank, (name, dist) in enumerate(result.ranking(), start=1):
        j = result.feature_names.index(name)
        rows.append([rank, name, dist, None if band is None else float(band[j]), bool(sig[j])])
    _write_rows(Path(args.out).with_suffix(".csv"),
                ["rank", "feature", "wasserstein", "null_band", "significant"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiments


def _conclusion(p):
    return "Distinct" if p < DISTINCT_P else "Not Distinct"


def _ks_row(label, a, b):
    r = ks_two_sample(a, b)
    return {"comparison": label, "statistic": r.statistic, "p_value": r.p_value,
            "conclusion": _conclusion(r.p_value)}


def _fit(args, data, estimator="gbdt"):
    return det.fit_estimator(data, estimator, args.depth, args.trees, args.lr)


def _exp_table1(args, n, seed):
    rho = 0.2 if args.rho is None else args.rho
    ref, new = generate_scenario(ShiftScenario("multivariate", rho, 0.1, n, seed))
    model = _fit(args, ref)
    S0, S1 = explain_dataset(model, ref).values, explain_dataset(model, new).values
    rows = [_ks_row(f"P({c}) vs P({c}_new)", ref.features[:, j], new.features[:, j])
            for j, c in enumerate(ref.feature_names)]
    rows += [_ks_row(f"S_{c} vs S_{c}_new", S0[:, j], S1[:, j])
             for j, c in enumerate(ref.feature_names)]
    return {"rho": rho}, rows, {}


def _exp_table2(args, n, seed):
    ref, new = generate_scenario(ShiftScenario("uninformative", 0.0, 0.1, n, seed))
    model = _fit(args, ref)
    S0, S1 = explain_dataset(model, ref).values, explain_dataset(model, new).values
    rows = [_ks_row("P(x3) vs P(x3_new)", ref.features[:, 2], new.features[:, 2]),
            _ks_row("f(X) vs f(X_new)", predict(model, ref), predict(model, new))]
    rows += [_ks_row(f"S_{c} vs S_{c}_new", S0[:, j], S1[:, j])
             for j, c in enumerate(ref.feature_names)]
    extra = {"shap_x3_identically_zero": bool(np.all(S0[:, 2] == 0) and np.all(S1[:, 2] == 0))}
    return {}, rows, extra


def _exp_table3(args, n, seed):
    ref, new = generate_scenario(ShiftScenario("swap_uniform", 0.0, 0.0, n, seed))
    model = _fit(args, ref, "linear")
    S0, S1 = explain_dataset(model, ref).values, explain_dataset(model, new).values
    rows = [_ks_row("f(X) vs f(X_new)", predict(model, ref), predict(model, new))]
    rows += [_ks_row(f"S_{c} vs S_{c}_new", S0[:, j], S1[:, j])
             for j, c in enumerate(ref.feature_names)]
    extra = {"coefficients": model.coefficients.tolist(), "intercept": model.intercept}
    return {"noise_sd": 0.0, "estimator": "linear"}, rows, extra


def capability_matrix(multivariate: dict, uninformative: dict):
    """One row per method from two :func:`baseline_suite` results.

    A method is accountable when it exposes per-feature attributions, flags
    the multivariate shift and stays silent on the uninformative one.
    """
    rows = []
    for name in multivariate:
        m, u = multivariate[name], uninformative[name]
        rows.append({"method": name, "multivariate_flag": bool(m.flag),
                     "uninformative_flag": bool(u.flag),
                     "accountable": bool(m.has_attribution and m.flag and not u.flag),
                     "multivariate_statistic": m.statistic, "uninformative_statistic": u.statistic})
    return rows


def _exp_table4(args, n, seed):
    rho = 0.9 if args.rho is None else args.rho
    results = {}
    for kind, r in (("multivariate", rho), ("uninformative", 0.0)):
        ref, new = generate_scenario(ShiftScenario(kind, r, 0.1, n, seed))
        d = det.ExplanationShiftDetector(depth=args.depth, n_trees=args.trees,
                                         learning_rate=args.lr, l2_penalty=args.l2,
                                         auc_threshold=args.threshold, seed=seed).fit(ref)
        results[kind] = d.baselines(new)
    rows = capability_matrix(results["multivariate"], results["uninformative"])
    _write_rows(Path(args.out) / "capability_matrix.csv",
                ["method", "multivariate_flag", "uninformative_flag", "accountable"],
                [[r["method"], r["multivariate_flag"], r["uninformative_flag"], r["accountable"]]
                 for r in rows])
    out_rows = []
    for kind, res in results.items():
        for name, mr in res.items():
            row = {"comparison": f"{kind}:{name}", "statistic": mr.statistic,
                   "p_value": mr.p_value, "flag": mr.flag}
            if name.endswith("_detector"):
                row["conclusion"] = "OOD" if mr.flag else "ID"
            else:
                row["conclusion"] = _conclusion(mr.p_value)
            if mr.attribution is not None:
                row["attribution"] = mr.attribution
            out_rows.append(row)
    return {"rho": rho}, out_rows, {"capability_matrix": rows}


def _exp_fig2(args, n, seed):
    curve, rows = [], []
    coefficients_at_1 = None
    for rho in FIG2_RHOS:
        ref, new = generate_scenario(ShiftScenario("sensitivity", rho, 0.1, n, seed))
        d = det.ExplanationShiftDetector(depth=args.depth, n_trees=args.trees,
                                         learning_rate=args.lr, l2_penalty=args.l2,
                                         auc_threshold=args.threshold, seed=seed).fit(ref)
        reps = {s: d.detect(new, s) for s in det.SPACES}
        f0, f1 = predict(d.model, d.reference), predict(d.model, new)
        ks = ks_two_sample(f0, f1)
        w1 = wasserstein1(f0, f1)
        curve.append([rho, reps["explanation"].drift_score, reps["input"].drift_score,
                      reps["prediction"].drift_score, ks.statistic, w1])
        for s, rep in reps.items():
            rows.append({"comparison": f"rho={rho:g}:{s}", "statistic": rep.auc,
                         "p_value": None, "drift_score": rep.drift_score,
                         "conclusion": rep.verdict})
        if rho == 1.0:
            coefficients_at_1 = dict(zip(reps["explanation"].feature_names,
                                         reps["explanation"].coefficients.tolist()))
    _write_rows(Path(args.out) / "fig2_sensitivity.csv",
                ["rho", "drift_score_explanation", "drift_score_input", "drift_score_prediction",
                 "ks_output", "wasserstein_output"], curve)
    return {"rhos": list(FIG2_RHOS)}, rows, {"explanation_coefficients_rho_1": coefficients_at_1}


_RUNNERS = {"table1_multivariate": _exp_table1, "table2_uninformative": _exp_table2,
            "table3_prediction_invariant": _exp_table3, "table4_matrix": _exp_table4,
            "fig2_sensitivity": _exp_fig2}


def run_experiment(args):
    """Run one experiment; returns the report dict (also written to disk)."""
    if args.experiment is None:
        raise UsageError("experiment name required")
    n = args.n if args.n is not None else (PAPER_N if args.paper_scale else DESK_N)
    if n < 100:
        raise UsageError("experiments need n >= 100")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    params, rows, extra = _RUNNERS[args.experiment](args, n, args.seed)
    report = {
        "schema_version": RUN_SCHEMA_VERSION,
        "report": "experiment",
        "experiment": args.experiment,
        "config": {"n": n, "seed": args.seed, "depth": args.depth, "trees": args.trees,
                   "lr": args.lr, "l2": args.l2, "threshold": args.threshold, **params},
        "thresholds": {"distinct_p_value": DISTINCT_P, "auc_threshold": args.threshold},
        "results": rows,
        **extra,
        "wall_time_s": time.perf_counter() - start,
    }
    _dump(report, out / f"{args.experiment}.json", "run_report")
    if args.experiment.startswith("table") and args.experiment != "table4_matrix":
        _write_rows(out / f"{args.experiment}.csv", ["comparison", "statistic", "p_value", "conclusion"],
                    [[r["comparison"], r["statistic"], r["p_value"], r["conclusion"]] for r in rows])
    return report


def cmd_experiment(args):
    run_experiment(args)
    return EXIT_OK


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect,
             "attribute": cmd_attribute, "experiment": cmd_experiment}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"shiftscope: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"shiftscope: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"shiftscope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
