"""Command-line entry point ``calgp``.

Exit codes: 0 success, 2 configuration or data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .baselines import fit_baseline, model_from_dict
from .bayesopt import FUNCTIONS, KINDS, run_bayesopt
from .calibration import CalibrationConfig, calibrate_all
from .exceptions import CalGPError, CalibrationError, ConfigError, DataError, NumericalError, OptimizationError
from .gp import OptimizerConfig, PosteriorState, fit_posterior, optimize_hyperparameters
from .harness import (
    METHODS,
    ExperimentConfig,
    apply_standardization,
    load_csv,
    run_experiment,
    standardization_dict,
    standardize,
)
from .metrics import evaluate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _split(text):
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--split expects three comma-separated numbers, got {text!r}") from None
    return parts


def _delta_grid(text):
    if text is None or text == "theorem":
        return None
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--delta-grid expects 'theorem' or comma-separated levels, got {text!r}") from None


def _methods(text):
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {','.join(METHODS)}")
    return methods


def _calib_config(args):
    return CalibrationConfig(mode=args.mode, subset_cap=args.subset_cap, seed=args.seed)


def _write_json(path, obj):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None


def cmd_fit(args):
    raw = load_csv(args.dataset, args.target)
    (train,) = standardize(raw)
    theta, sigma0 = optimize_hyperparameters(train, config=OptimizerConfig(seed=args.seed))
    post = fit_posterior(train, theta, sigma0)
    _write_json(args.out, {"format": "calgp/1", "kind": "regressor", "regressor": post.to_dict(),
                           "standardization": standardization_dict(train)})
    print(f"theta_R: amplitude={theta.amplitude:.6g} lengthscales={np.round(theta.lengthscales, 6).tolist()} "
          f"noise={sigma0:.6g} -> {args.out}")


def cmd_calibrate(args):
    doc = _read_json(args.model)
    if doc.get("kind") != "regressor":
        raise ConfigError(f"{args.model} is not a regressor file (kind={doc.get('kind')!r})")
    post = PosteriorState.from_dict(doc["regressor"])
    cal = apply_standardization(doc["standardization"], load_csv(args.dataset, args.target))
    if args.method == "ours":
        model = calibrate_all(_delta_grid(args.delta_grid), cal, post, _calib_config(args))
        summary = f"{len(model.levels)} levels, zero crossing at {model.zero_crossing and model.zero_crossing[0]}"
    else:
        model = fit_baseline(args.method, cal, post, seed=args.seed)
        summary = f"{model.kind} baseline on {cal.n} points"
    out = model.to_dict()
    out["standardization"] = doc["standardization"]
    _write_json(args.out, out)
    print(f"{summary} -> {args.out}")


def cmd_eval(args):
    doc = _read_json(args.model)
    model = model_from_dict(doc)
    test = apply_standardization(doc["standardization"], load_csv(args.dataset, args.target))
    report = evaluate(model, test.inputs, test.targets)
    if args.out:
        _write_json(args.out, report.to_dict())
        report.write_reliability_csv(os.path.splitext(args.out)[0] + "_reliability.csv")
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "observed"}, indent=1))


def cmd_benchmark(args):
    cfg = ExperimentConfig(
        dataset=args.dataset,
        target=args.target,
        fractions=_split(args.split),
        repetitions=args.reps,
        seed=args.seed,
        methods=_methods(args.methods),
        calibration=_calib_config(args),
        delta_grid=_delta_grid(args.delta_grid),
        workers=args.workers,
    )
    table = run_experiment(cfg)
    table.write(args.out_dir)
    for m, s in table.summary().items():
        print(f"{m:5s} " + "  ".join(f"{k}={v['mean']:.4f}±{v['std']:.4f}" for k, v in s.items()))
    print(f"results -> {args.out_dir}")


def cmd_bayesopt(args):
    os.makedirs(args.out_dir, exist_ok=True)
    kinds = KINDS if args.kind == "both" else (f"{args.kind}_ucb",)
    summary = {}
    for kind in kinds:
        cum, simple = [], []
        for s in range(args.seeds):
            tr = run_bayesopt(args.function, kind, args.budget, seed=args.seed + s)
            tr.write_csv(os.path.join(args.out_dir, f"{args.function}_{kind}_seed{args.seed + s}.csv"))
            cum.append(float(tr.cumulative_regret[-1]))
            simple.append(float(tr.simple_regret[-1]))
        summary[kind] = {"mean_cumulative_regret": float(np.mean(cum)),
                         "mean_simple_regret": float(np.mean(simple)),
                         "cumulative_regret": cum, "simple_regret": simple}
        print(f"{kind}: cumulative={np.mean(cum):.4f} simple={np.mean(simple):.4f}")
    _write_json(os.path.join(args.out_dir, f"{args.function}_summary.json"),
                {"function": args.function, "budget": args.budget, "seeds": args.seeds, "kinds": summary})


def build_parser():
    p = argparse.ArgumentParser(prog="calgp", description="Sharp calibrated Gaussian process quantiles.")
    p.add_argument("--version", action="version", version=f"calgp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, required=True):
        sp.add_argument("--dataset", required=required, help="CSV file with a header row")
        sp.add_argument("--target", default=None, help="target column name (default: last column)")
        sp.add_argument("--seed", type=int, default=0)

    def calib_args(sp):
        sp.add_argument("--delta-grid", default="theorem",
                        help="'theorem' for j/(N_cal+1) or comma-separated levels")
        sp.add_argument("--subset-cap", type=int, default=None,
                        help="train calibration hyperparameters on at most this many training points")
        sp.add_argument("--mode", choices=("full", "line-search"), default="full")

    sp = sub.add_parser("fit", help="fit the regressor hyperparameters and write a model file")
    data_args(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("calibrate", help="calibrate a fitted regressor on held-out data")
    data_args(sp)
    calib_args(sp)
    sp.add_argument("--model", required=True, help="regressor file written by 'fit'")
    sp.add_argument("--method", choices=METHODS, default="ours")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("eval", help="calibration and sharpness metrics on a test CSV")
    data_args(sp)
    sp.add_argument("--model", required=True, help="model file written by 'calibrate'")
    sp.add_argument("--out", default=None, help="write the report JSON (and reliability CSV) here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("benchmark", help="repeated split/fit/calibrate/evaluate protocol")
    data_args(sp)
    calib_args(sp)
    sp.add_argument("--split", default="0.6,0.2,0.2")
    sp.add_argument("--reps", type=int, default=20)
    sp.add_argument("--methods", default=",".join(METHODS))
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("bayesopt", help="UCB Bayesian optimization on a 2-D test function")
    sp.add_argument("--function", choices=sorted(FUNCTIONS), required=True)
    sp.add_argument("--kind", choices=("calibrated", "vanilla", "both"), default="both")
    sp.add_argument("--budget", type=int, default=100)
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0, help="first seed")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_bayesopt)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"calgp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, OptimizationError, CalibrationError) as exc:
        print(f"calgp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CalGPError as exc:
        print(f"calgp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
