"""Dataset loading, splitting, and the repeated-split benchmark protocol."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import fit_baseline
from .calibration import CalibrationConfig, calibrate_all
from .exceptions import ConfigError, DataError, QuantileClampWarning
from .gp import Dataset, OptimizerConfig, fit_posterior, optimize_hyperparameters
from .metrics import MetricsReport, evaluate

logger = logging.getLogger(__name__)

METHODS = ("ours", "rk", "rv", "rm", "base")
BAND_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)


def load_csv(path, target=None):
    """Read a numeric CSV with a header row into an unstandardized Dataset.

    The last column is the target unless ``target`` names another one.
    Constant feature columns are dropped with a warning.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DataError("need at least one feature column and a target column")
    if target is None:
        t_col = len(header) - 1
    elif target in header:
        t_col = header.index(target)
    else:
        raise DataError(f"target column {target!r} not found in header", column=target)
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path} has no data rows")
    values = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"line {i}: expected {len(header)} cells, got {len(r)}", row=i)
        for j, cell in enumerate(r):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"line {i}, column {header[j]!r}: non-numeric value {cell!r}", row=i, column=header[j]
                ) from None
            if not math.isfinite(v):
                raise DataError(f"line {i}, column {header[j]!r}: non-finite value {cell!r}",
                                row=i, column=header[j])
            values[i - 2, j] = v
    feats = [j for j in range(len(header)) if j != t_col]
    keep = []
    for j in feats:
        if np.ptp(values[:, j]) == 0.0:
            warnings.warn(f"dropping constant feature {header[j]!r}", UserWarning, stacklevel=2)
        else:
            keep.append(j)
    if not keep:
        raise DataError("every feature column is constant")
    return Dataset(values[:, keep], values[:, t_col])


def split_sizes(n, fractions):
    f_tr, f_cal, f_te = _check_fractions(fractions)
    n_cal, n_te = int(math.floor(f_cal * n)), int(math.floor(f_te * n))
    return n - n_cal - n_te, n_cal, n_te


def _check_fractions(fractions):
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    return fr


def standardize(train, *others):
    """Standardize ``train`` with its own statistics and apply them to ``others``."""
    X, y = train.inputs, train.targets
    mx, sx = X.mean(axis=0), X.std(axis=0)
    sx = np.where(sx > 0, sx, 1.0)
    my, sy = float(y.mean()), float(y.std())
    if not sy > 0:
        raise DataError("training targets are constant")
    out = [Dataset((X - mx) / sx, (y - my) / sy, mx, sx, my, sy)]
    for d in others:
        out.append(Dataset((d.inputs - mx) / sx, (d.targets - my) / sy, mx, sx, my, sy))
    return tuple(out)


def split_and_standardize(data, fractions=(0.6, 0.2, 0.2), seed=0):
    """Random disjoint train/cal/test split, standardized with training statistics.

    Rounding remainders go to the training set.
    """
    n_tr, n_cal, n_te = split_sizes(data.n, fractions)
    if min(n_tr, n_cal, n_te) < 1:
        raise ConfigError(f"split of {data.n} rows leaves an empty part: {(n_tr, n_cal, n_te)}")
    perm = np.random.default_rng(seed).permutation(data.n)
    idx = perm[:n_tr], perm[n_tr : n_tr + n_cal], perm[n_tr + n_cal :]
    return standardize(*(data.subset(np.sort(i)) for i in idx))


def synthetic_heteroscedastic(n, rng):
    """``y = sin(3x) + (0.1 + 0.4|x|) eps`` with ``x ~ U[-2, 2]``."""
    x = rng.uniform(-2.0, 2.0, size=(n, 1))
    y = np.sin(3.0 * x[:, 0]) + (0.1 + 0.4 * np.abs(x[:, 0])) * rng.standard_normal(n)
    return Dataset(x, y)


def standardization_dict(ds):
    return {
        "feature_means": ds.feature_means.tolist(),
        "feature_stds": ds.feature_stds.tolist(),
        "target_mean": ds.target_mean,
        "target_std": ds.target_std,
    }


def apply_standardization(meta, raw):
    """Standardize a raw Dataset with stored statistics."""
    mx = np.asarray(meta["feature_means"], float)
    sx = np.asarray(meta["feature_stds"], float)
    if raw.d != mx.size:
        raise DataError(f"dataset has {raw.d} features, model expects {mx.size}")
    my, sy = float(meta["target_mean"]), float(meta["target_std"])
    return Dataset((raw.inputs - mx) / sx, (raw.targets - my) / sy, mx, sx, my, sy)


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    target: str | None = None
    fractions: tuple = (0.6, 0.2, 0.2)
    repetitions: int = 20
    seed: int = 0
    methods: tuple = METHODS
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    delta_grid: tuple | None = None
    workers: int = 1
    m: int = 21

    def __post_init__(self):
        self.fractions = _check_fractions(self.fractions)
        if int(self.repetitions) < 1:
            raise ConfigError("repetitions must be at least 1")
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.delta_grid is not None:
            self.delta_grid = tuple(float(d) for d in self.delta_grid)


def fit_methods(train, cal, methods, optimizer, calibration, delta_grid=None):
    """Fit the regressor on ``train`` and every requested recalibrator on ``cal``."""
    theta, sigma0 = optimize_hyperparameters(train, config=optimizer)
    post = fit_posterior(train, theta, sigma0)
    models, notes = {}, {}
    for m in methods:
        if m == "ours":
            model = calibrate_all(delta_grid, cal, post, calibration)
            notes[m] = {
                "levels": len(model.levels),
                "repaired": int(sum(lv.repaired for lv in model.levels)),
                "optimizer_warnings": int(sum(lv.warning is not None for lv in model.levels)),
            }
        else:
            model = fit_baseline(m, cal, post, seed=calibration.seed)
            notes[m] = {}
        models[m] = model
    return post, models, notes


def evaluate_split(train, cal, test, methods, optimizer, calibration, delta_grid=None, m=21):
    """One repetition: fit everything, return ``({method: MetricsReport}, notes, models)``."""
    _, models, notes = fit_methods(train, cal, methods, optimizer, calibration, delta_grid)
    reports = {k: evaluate(mod, test.inputs, test.targets, m) for k, mod in models.items()}
    for k, rep in reports.items():
        notes[k]["density_floored"] = rep.n_density_floored
    return reports, notes, models


def _rep_seeds(seed, reps):
    return [tuple(int(v) for v in c.generate_state(3)) for c in np.random.SeedSequence(seed).spawn(reps)]


def _run_rep(args):
    data, config, rep, seeds = args
    split_seed, opt_seed, cal_seed = seeds
    train, cal, test = split_and_standardize(data, config.fractions, split_seed)
    opt = replace(config.optimizer, seed=opt_seed)
    calib = replace(config.calibration, seed=cal_seed)
    reports, notes, models = evaluate_split(train, cal, test, config.methods, opt, calib,
                                            config.delta_grid, config.m)
    bands = None
    if rep == 0:
        bands = {k: band_rows(mod, test) for k, mod in models.items()}
    return rep, reports, notes, bands


def band_rows(model, test):
    """Rows ``(index, x0, y, mean, q...)`` for plotting quantile bands, sorted by x0."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuantileClampWarning)
        qs = np.array([model.quantile(d, test.inputs) for d in BAND_LEVELS])
    mu = model.mean(test.inputs)
    order = np.argsort(test.inputs[:, 0], kind="stable")
    return [[int(i), float(test.inputs[i, 0]), float(test.targets[i]), float(mu[i])]
            + [float(v) for v in qs[:, i]] for i in order]


@dataclass
class ResultTable:
    dataset: str
    methods: tuple
    reports: list  # per repetition: {method: MetricsReport}
    notes: list
    bands: dict | None = None

    def values(self, method, metric):
        return np.array([getattr(r[method], metric) for r in self.reports])

    def summary(self):
        out = {}
        for m in self.methods:
            out[m] = {}
            for key in ("ece", "avg_std", "nll", "ci95_width"):
                v = self.values(m, key)
                out[m][key] = {"mean": float(v.mean()), "std": float(v.std())}
        return out

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "methods": list(self.methods),
            "repetitions": len(self.reports),
            "summary": self.summary(),
            "per_repetition": [
                {m: r[m].to_dict() for m in self.methods} for r in self.reports
            ],
            "notes": self.notes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "results.json"), "w") as fh:
            fh.write(self.to_json() + "\n")
        for m in self.methods:
            obs = np.mean([[ph for _, ph in r[m].observed] for r in self.reports], axis=0)
            nominal = [p for p, _ in self.reports[0][m].observed]
            with open(os.path.join(out_dir, f"reliability_{m}.csv"), "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["nominal", "observed_mean"])
                wr.writerows([repr(p), repr(float(o))] for p, o in zip(nominal, obs))
        for m, rows in (self.bands or {}).items():
            with open(os.path.join(out_dir, f"bands_{m}.csv"), "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["index", "x0", "y", "mean"] + [f"q{d:g}" for d in BAND_LEVELS])
                wr.writerows([repr(v) for v in row] for row in rows)


def run_experiment(config, data=None):
    """Repeat split / fit / calibrate / evaluate and aggregate per method."""
    if data is None:
        if config.dataset is None:
            raise ConfigError("no dataset given")
        data = load_csv(config.dataset, config.target)
    name = os.path.basename(config.dataset) if config.dataset else "in-memory"
    tasks = [(data, config, k, s) for k, s in enumerate(_rep_seeds(config.seed, config.repetitions))]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            results = list(ex.map(_run_rep, tasks))
    else:
        results = [_run_rep(t) for t in tasks]
    results.sort(key=lambda t: t[0])
    for rep, _, notes, _ in results:
        logger.info("repetition %d done: %s", rep, notes)
    return ResultTable(name, config.methods, [r[1] for r in results], [r[2] for r in results],
                       results[0][3])
