"""Reference recalibrators that reuse the regressor's own posterior std.

Kinds:

* ``scaled`` (RK): ``mu + q_lin(delta, z) * sigma_R`` with z the calibration
  z-scores under the regressor's hyperparameters.
* ``randomized_scaled`` (RV): as ``scaled`` but between two neighbouring
  order statistics the interpolation weight follows a seeded random
  piecewise-linear warp of the segment, so knots are reproduced exactly.
* ``constant_width`` (RM): ``mu + q_lin(delta, r)`` on raw residuals.
* ``gaussian``: the uncalibrated posterior, ``mu + Phi^-1(delta) * sigma_R``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .calibration import CalibrationModel, _position, q_lin, q_lin_inverse, residuals
from .exceptions import ConfigError, QuantileClampWarning
from .gp import PosteriorState

KINDS = ("scaled", "randomized_scaled", "constant_width", "gaussian")
ALIASES = {"rk": "scaled", "rv": "randomized_scaled", "rm": "constant_width", "base": "gaussian"}


def _kind(name):
    kind = ALIASES.get(name, name)
    if kind not in KINDS:
        raise ConfigError(f"unknown baseline kind {name!r}")
    return kind


def _breakpoint(seed, segment):
    # one uniform draw per (seed, segment), independent of query order
    return float(np.random.default_rng([seed, segment]).uniform(0.02, 0.98))


def _warp(t, u):
    return np.where(t <= u, 0.5 * t / u, 0.5 + 0.5 * (t - u) / (1.0 - u))


def _unwarp(f, u):
    return np.where(f <= 0.5, 2.0 * u * f, u + 2.0 * (f - 0.5) * (1.0 - u))


@dataclass(frozen=True, eq=False)
class BaselineModel:
    kind: str
    regressor: PosteriorState
    scores: np.ndarray
    seed: int = 0

    def __post_init__(self):
        s = np.asarray(self.scores, float)
        if np.any(np.diff(s) < 0):
            raise ValueError("scores must be sorted ascending")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def n(self):
        return self.scores.size

    @property
    def delta_min(self):
        return 0.0 if self.kind == "gaussian" else 1.0 / (self.n + 1)

    @property
    def delta_max(self):
        return 1.0 if self.kind == "gaussian" else self.n / (self.n + 1.0)

    def mean(self, X):
        return self.regressor.mean(np.atleast_2d(np.asarray(X, float)))

    def _score(self, delta):
        if self.kind == "gaussian":
            return float(norm.ppf(delta))
        if self.kind != "randomized_scaled":
            return q_lin(delta, self.scores)
        i, t = _position(delta, self.n)
        if t == 0.0:
            return float(self.scores[i])
        w = float(_warp(t, _breakpoint(self.seed, i)))
        return float(self.scores[i] + w * (self.scores[i + 1] - self.scores[i]))

    def offset(self, delta, X, warn=True):
        if not 0.0 <= delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {delta}")
        if warn and not self.delta_min <= delta <= self.delta_max:
            warnings.warn(f"delta={delta:.6g} outside the calibrated range; clamped",
                          QuantileClampWarning, stacklevel=3)
        X = np.atleast_2d(np.asarray(X, float))
        s = self._score(delta)
        if self.kind == "constant_width":
            return np.full(X.shape[0], s)
        return s * self.regressor.std(X)

    def quantile(self, delta, X, warn=True):
        return self.mean(X) + self.offset(delta, X, warn)

    def cdf(self, X, y, exact=False):
        """Level of ``y`` under the quantile curve, clamped to the calibrated range."""
        X = np.atleast_2d(np.asarray(X, float))
        v = np.asarray(y, float) - self.mean(X)
        if self.kind != "constant_width":
            v = v / self.regressor.std(X)
        if self.kind == "gaussian":
            return norm.cdf(v)
        if self.kind == "scaled":
            return q_lin_inverse(v, self.scores)
        if self.kind == "constant_width":
            return q_lin_inverse(v, self.scores)
        a, n = self.scores, self.n
        cnt = np.searchsorted(a, v, side="right")
        out = np.where(cnt == 0, 1.0 / (n + 1), n / (n + 1.0))
        mid = np.nonzero((cnt > 0) & (cnt < n))[0]
        lo = cnt[mid] - 1
        f = (v[mid] - a[lo]) / (a[lo + 1] - a[lo])
        u = np.array([_breakpoint(self.seed, int(i)) for i in lo])
        out[mid] = (lo + 1 + _unwarp(f, u)) / (n + 1)
        return out

    def to_dict(self):
        return {
            "format": "calgp/1",
            "kind": self.kind,
            "regressor": self.regressor.to_dict(),
            "scores": self.scores.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(_kind(d["kind"]), PosteriorState.from_dict(d["regressor"]),
                   np.asarray(d["scores"], float), int(d.get("seed", 0)))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def fit_baseline(kind, cal_data, regressor, seed=0):
    """Store the sorted calibration scores for a baseline recalibrator."""
    kind = _kind(kind)
    r = residuals(cal_data, regressor)
    if kind == "constant_width":
        scores = r
    elif kind == "gaussian":
        scores = np.empty(0)
    else:
        scores = r / regressor.std(cal_data.inputs)
    return BaselineModel(kind, regressor, np.sort(scores, kind="stable"), int(seed))


def baseline_quantile(model, delta, x):
    return model.quantile(delta, x)


def model_from_dict(d):
    """Rebuild any serialized model from its ``kind`` tag."""
    if d.get("kind") == "calibrated_gp":
        return CalibrationModel.from_dict(d)
    return BaselineModel.from_dict(d)


def model_from_json(text):
    return model_from_dict(json.loads(text))
