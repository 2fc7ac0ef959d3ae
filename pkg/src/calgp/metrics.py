"""Calibration and sharpness diagnostics for any quantile model.

A model needs ``quantile(delta, X)`` and ``cdf(X, y)``. Observed confidence
counts test points with ``y <= quantile(p, x)``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import QuantileClampWarning

DENSITY_FLOOR = 1e-12
STD_LEVELS = np.linspace(0.005, 0.995, 199)


def _quantile(model, p, X):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuantileClampWarning)
        return np.asarray(model.quantile(p, X), float)


def _cdf(model, X, y):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuantileClampWarning)
        return np.asarray(model.cdf(X, y), float)


def level_grid(m=21):
    if m < 2:
        raise ValueError("m must be at least 2")
    return np.arange(m) / (m - 1.0)


def observed_confidence(model, X, y, p):
    """Fraction of test points at or below the model's ``p``-quantile."""
    y = np.asarray(y, float)
    if y.size == 0:
        raise ValueError("need at least one test point")
    return float(np.mean(y <= _quantile(model, p, X)))


def observed_levels(model, X, y, m=21):
    return np.array([observed_confidence(model, X, y, p) for p in level_grid(m)])


def ece(model, X, y, m=21):
    """Sum over ``m`` evenly spaced levels of the squared nominal-vs-observed gap."""
    p = level_grid(m)
    return float(np.sum((p - observed_levels(model, X, y, m)) ** 2))


def sharpness(model, X, y):
    """Return ``(avg_std, nll, ci95_width, n_floored)`` on the test set.

    The std integrates the quantile curve over 199 levels in [0.005, 0.995]
    with the trapezoid rule; each 0.005 tail mass sits at the end quantile.
    The density is a central difference of the cdf with step
    1e-3 times the local interquartile width, floored at 1e-12.
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float)
    lv = STD_LEVELS
    Q = np.array([_quantile(model, d, X) for d in lv])
    tail = lv[0]
    w = np.full(lv.size, lv[1] - lv[0])
    w[0] = w[-1] = 0.5 * (lv[1] - lv[0])
    w[0] += tail
    w[-1] += tail
    mu = w @ Q
    var = w @ (Q - mu) ** 2
    avg_std = float(np.mean(np.sqrt(np.maximum(var, 0.0))))

    ci95 = float(np.mean(_quantile(model, 0.975, X) - _quantile(model, 0.025, X)))

    iqr = _quantile(model, 0.75, X) - _quantile(model, 0.25, X)
    h = np.maximum(1e-3 * iqr, 1e-12)
    dens = (_cdf(model, X, y + h) - _cdf(model, X, y - h)) / (2.0 * h)
    floored = dens <= DENSITY_FLOOR
    nll = float(np.mean(-np.log(np.where(floored, DENSITY_FLOOR, dens))))
    return avg_std, nll, ci95, int(floored.sum())


@dataclass
class MetricsReport:
    ece: float
    observed: list
    avg_std: float
    nll: float
    ci95_width: float
    n_density_floored: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def write_reliability_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["nominal", "observed"])
            for p, ph in self.observed:
                wr.writerow([repr(p), repr(ph)])


def evaluate(model, X, y, m=21):
    """All diagnostics for ``model`` on ``(X, y)``."""
    p = level_grid(m)
    ph = observed_levels(model, X, y, m)
    avg_std, nll, ci95, nf = sharpness(model, X, y)
    return MetricsReport(
        float(np.sum((p - ph) ** 2)),
        [(float(a), float(b)) for a, b in zip(p, ph)],
        avg_std,
        nll,
        ci95,
        nf,
    )
