"""Sharp calibrated quantiles from per-level calibration hyperparameters.

For a confidence level ``delta`` the predictive quantile is

    mu(theta_R, x) + beta_delta * sigma(theta_delta, x)

where ``mu`` is the regressor's posterior mean, ``sigma`` is a GP posterior
std on the same training inputs but with its own hyperparameters
``theta_delta``, and ``beta_delta`` is the interpolated empirical
``delta``-quantile of the calibration z-scores under that std. Choosing
``beta`` this way pins the in-sample coverage, so ``theta_delta`` is free to
be optimized for sharpness.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import brentq, minimize, minimize_scalar

from .exceptions import CalibrationError, QuantileClampWarning
from .gp import ARD_SE, Hyperparameters, PosteriorState, StdEvaluator, cholesky_with_jitter

logger = logging.getLogger(__name__)

_KNOT_SNAP = 1e-9


# ---------------------------------------------------------------------------
# scores and the piecewise-linear empirical quantile


def residuals(cal_data, regressor):
    """Calibration targets minus the regressor's posterior mean."""
    return cal_data.targets - regressor.mean(cal_data.inputs)


def z_scores(residuals, sigmas):
    sigmas = np.asarray(sigmas, float)
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be strictly positive")
    return np.asarray(residuals, float) / sigmas


def _position(delta, n):
    """0-based lower order-statistic index and interpolation weight for ``delta``."""
    s = delta * (n + 1)
    if s <= 1.0:
        return 0, 0.0
    if s >= n:
        return n - 1, 0.0
    k = round(s)
    if abs(s - k) <= _KNOT_SNAP:
        return int(k) - 1, 0.0
    lo = int(np.floor(s))
    return lo - 1, s - lo


def _check_delta(delta):
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")


def q_lin(delta, a):
    """Monotone piecewise-linear empirical quantile of ``a``.

    Maps ``j / (N + 1)`` to the j-th smallest entry of ``a`` and interpolates
    linearly in between. Below ``1 / (N + 1)`` the smallest entry is returned,
    above ``N / (N + 1)`` the largest.
    """
    _check_delta(delta)
    a = np.asarray(a, float).ravel()
    if a.size == 0:
        raise ValueError("q_lin needs a non-empty vector")
    srt = np.sort(a, kind="stable")
    i, t = _position(delta, a.size)
    if t == 0.0:
        return float(srt[i])
    return float(srt[i] + t * (srt[i + 1] - srt[i]))


def _q_lin_with_weights(delta, a):
    """``q_lin`` plus the original indices and weights of the entries it mixes."""
    order = np.argsort(a, kind="stable")
    i, t = _position(delta, a.size)
    lo = order[i]
    if t == 0.0:
        return float(a[lo]), (lo,), (1.0,)
    hi = order[i + 1]
    return float(a[lo] + t * (a[hi] - a[lo])), (lo, hi), (1.0 - t, t)


def q_lin_inverse(values, sorted_a):
    """Largest ``delta`` with ``q_lin(delta, a) <= value``, clamped to the knot range."""
    a = np.asarray(sorted_a, float)
    n = a.size
    v = np.asarray(values, float)
    cnt = np.searchsorted(a, v, side="right")
    out = np.empty(v.shape)
    low = cnt == 0
    top = cnt >= n
    mid = ~(low | top)
    out[low] = 1.0 / (n + 1)
    out[top] = n / (n + 1)
    l = cnt[mid]
    frac = (v[mid] - a[l - 1]) / (a[l] - a[l - 1])
    out[mid] = (l + frac) / (n + 1)
    return out


def theorem_grid(n_cal, cap=None):
    """Levels ``j / (n_cal + 1)``, thinned evenly to at most ``cap`` levels."""
    j = np.arange(1, n_cal + 1)
    if cap is not None and n_cal > cap:
        j = np.unique(np.round(np.linspace(1, n_cal, cap)).astype(int))
    return j / (n_cal + 1.0)


# ---------------------------------------------------------------------------
# single-level objective


def _evaluator(cal_data, regressor):
    return StdEvaluator(regressor.training_inputs, regressor.noise_std, cal_data.inputs)


def beta_of(delta, theta, cal_data, regressor):
    """``q_lin`` of the calibration z-scores under ``sigma(theta, .)``."""
    sig = _evaluator(cal_data, regressor)(theta.vector)
    return q_lin(delta, z_scores(residuals(cal_data, regressor), sig))


def sharpness_loss(delta, theta, cal_data, regressor):
    """Sum over calibration points of the squared quantile offset ``beta * sigma``."""
    return _Objective(delta, residuals(cal_data, regressor), _evaluator(cal_data, regressor)).value(
        theta.vector
    )


class _Objective:
    """Sharpness loss for one level as a function of the log-hyperparameters."""

    def __init__(self, delta, res, evaluator):
        self.delta = float(delta)
        self.r = np.asarray(res, float)
        self.ev = evaluator
        self.n_evals = 0

    def beta(self, tv):
        return q_lin(self.delta, self.r / self.ev(tv))

    def value(self, tv):
        self.n_evals += 1
        sig = self.ev(tv)
        b = q_lin(self.delta, self.r / sig)
        return float(b * b * np.sum(sig * sig))

    def value_and_grad(self, tv):
        self.n_evals += 1
        sig, vjp = self.ev(tv, grad=True)
        z = self.r / sig
        b, idx, w = _q_lin_with_weights(self.delta, z)
        S = float(np.sum(sig * sig))
        h = 2.0 * b * b * sig
        for i, wi in zip(idx, w):
            h[i] += 2.0 * b * S * wi * (-self.r[i] / sig[i] ** 2)
        return b * b * S, vjp(h)


@dataclass
class CalibrationConfig:
    """Knobs for the per-level sharpness optimization."""

    mode: str = "full"  # or "line-search"
    max_iter: int = 300
    ftol: float = 1e-6
    span: float = 8.0  # half-width of the log-theta box around the reference
    grid_cap: int | None = 99
    subset_cap: int | None = None
    seed: int = 0
    line_search_points: int = 25
    line_search_span: float = 4.0
    random_starts: int = 16  # extra uniform candidates in the feasible box per level
    order: str = "auto"  # "inward", "outward" or "auto" (better of both per side)
    anchored: bool = True  # keep theta_R feasible at every level

    def __post_init__(self):
        if self.mode not in ("full", "line-search"):
            raise ValueError(f"unknown calibration mode {self.mode!r}")
        if self.order not in ("auto", "inward", "outward"):
            raise ValueError(f"unknown level order {self.order!r}")


@dataclass(frozen=True, eq=False)
class CalibrationLevel:
    """Scaling ``beta`` and calibration hyperparameters ``theta`` for one ``delta``."""

    delta: float
    beta: float
    theta: Hyperparameters
    loss: float = float("nan")
    repaired: bool = False
    warning: str | None = None

    def to_dict(self):
        return {
            "delta": self.delta,
            "beta": self.beta,
            "theta": self.theta.to_dict(),
            "loss": self.loss,
            "repaired": self.repaired,
            "warning": self.warning,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["delta"]),
            float(d["beta"]),
            Hyperparameters.from_dict(d["theta"]),
            float(d["loss"]),
            bool(d.get("repaired", False)),
            d.get("warning"),
        )


def _line_search(obj, ref, c_lo, c_hi, n_points):
    """Best ``ref + c`` (all coordinates shifted by ``c``) for ``c`` in ``[c_lo, c_hi]``."""
    cs = np.linspace(c_lo, c_hi, n_points)
    vals = np.array([obj.value(ref + c) for c in cs])
    k = int(np.argmin(vals))
    a, b = cs[max(k - 1, 0)], cs[min(k + 1, n_points - 1)]
    best_c, best_v = cs[k], vals[k]
    if b > a:
        res = minimize_scalar(lambda c: obj.value(ref + c), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-6})
        if res.fun < best_v:
            best_c, best_v = res.x, res.fun
    return ref + best_c, float(best_v)


def _random_candidates(box_lo, box_hi, n, key):
    rng = np.random.default_rng(key)
    return list(box_lo + (box_hi - box_lo) * rng.uniform(size=(n, box_lo.size)))


def _solve(obj, candidates, box_lo, box_hi, config):
    """Minimize ``obj`` over log-theta inside the box ``[box_lo, box_hi]``.

    The best of ``candidates`` seeds L-BFGS-B. Returns every evaluated point
    as a list of ``(loss, theta_vec)`` sorted by loss, ties going to the
    earlier candidate (so the optimizer result wins only by strict
    improvement), together with a warning string or None.
    """
    candidates = [np.clip(c, box_lo, box_hi) for c in candidates]
    ranked = sorted(((obj.value(c), c) for c in candidates), key=lambda t: t[0])
    if config.mode == "line-search":
        return ranked, None
    x0 = ranked[0][1]

    def fun(x):
        try:
            return obj.value_and_grad(x)
        except ArithmeticError:
            return 1e30, np.zeros_like(x)

    warning = None
    try:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=list(zip(box_lo, box_hi)),
                       options={"maxiter": config.max_iter, "ftol": config.ftol, "gtol": 1e-10})
    except (ValueError, ArithmeticError) as exc:
        return ranked, f"optimizer failed: {exc}"
    if not res.success and res.nit >= config.max_iter:
        warning = "iteration cap reached"
    x1 = np.clip(res.x, box_lo, box_hi)
    ranked.append((obj.value(x1), x1))
    ranked.sort(key=lambda t: t[0])
    return ranked, warning


def calibrate_single(delta, init_theta, cal_data, regressor, config=None):
    """Optimize calibration hyperparameters for one confidence level.

    Starts from ``init_theta``, its best all-coordinate rescaling and
    ``config.random_starts`` random points, and never returns a loss above
    the loss at ``init_theta``.
    """
    return solve_level(delta, init_theta, residuals(cal_data, regressor),
                       _evaluator(cal_data, regressor), config)


def solve_level(delta, init_theta, res, evaluator, config=None):
    """:func:`calibrate_single` on precomputed residuals and a std map.

    ``evaluator(theta_vec, grad=False)`` must return the stds paired with
    ``res`` (and a vector-Jacobian product when ``grad=True``), e.g. a
    :class:`~calgp.gp.StdEvaluator` or :class:`~calgp.gp.LeaveOneOutStd`.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    config = config or CalibrationConfig()
    r = np.asarray(res, float)
    obj = _Objective(delta, r, evaluator)
    ref = init_theta.vector
    s = config.line_search_span
    ls, _ = _line_search(obj, ref, -s, s, config.line_search_points)
    lo, hi = ref - config.span, ref + config.span
    cands = [ref, ls] + _random_candidates(lo, hi, config.random_starts, [config.seed, 0])
    ranked, warn = _solve(obj, cands, lo, hi, config)
    loss, vec = ranked[0]
    beta = q_lin(delta, r / evaluator(vec))
    return CalibrationLevel(float(delta), beta, Hyperparameters.from_vector(vec), loss, False, warn)


# ---------------------------------------------------------------------------
# all levels


def _interp(knots, values, x):
    """Piecewise-linear interpolation that returns stored values exactly at knots."""
    j = int(np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(knots) - 1))
    if j == len(knots) - 1 or x == knots[j]:
        return values[j]
    w = (x - knots[j]) / (knots[j + 1] - knots[j])
    return values[j] + w * (values[j + 1] - values[j])


def _cheb_lobatto(a, b, n):
    k = np.arange(n)
    x = 0.5 * (a + b) - 0.5 * (b - a) * np.cos(np.pi * k / (n - 1))
    x[0], x[-1] = a, b
    w = (-1.0) ** k
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


def _barycentric(nodes, weights, values, x):
    """Evaluate, per column t, the interpolant through ``values[:, t]`` at ``x[t]``."""
    diff = x[None, :] - nodes[:, None]
    hit = diff == 0.0
    diff[hit] = 1.0
    c = weights[:, None] / diff
    out = np.sum(c * values, axis=0) / np.sum(c, axis=0)
    rows, cols = np.nonzero(hit)
    out[cols] = values[rows, cols]
    return out


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    """Calibrated quantile model for every ``delta`` between the first and last level.

    ``beta_hat`` and ``theta_hat`` interpolate the stored levels linearly
    (theta in log coordinates). When the betas change sign an extra knot is
    placed at the zero crossing with the componentwise minimum of the two
    bracketing thetas, so ``theta_hat`` is V-shaped around it.
    """

    levels: tuple
    regressor: PosteriorState
    cal_inputs: np.ndarray
    cal_residuals: np.ndarray
    zero_crossing: tuple | None = None
    knot_deltas: np.ndarray = field(init=False, repr=False)
    knot_betas: np.ndarray = field(init=False, repr=False)
    knot_thetas: np.ndarray = field(init=False, repr=False)
    _chol_cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        deltas = [lv.delta for lv in self.levels]
        betas = [lv.beta for lv in self.levels]
        thetas = [lv.theta.vector for lv in self.levels]
        if self.zero_crossing is not None:
            d0, th0 = self.zero_crossing
            k = int(np.searchsorted(deltas, d0))
            deltas.insert(k, float(d0))
            betas.insert(k, 0.0)
            thetas.insert(k, th0.vector)
        for name, v in (("knot_deltas", deltas), ("knot_betas", betas), ("knot_thetas", thetas)):
            a = np.array(v, dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    # -- interpolants -------------------------------------------------------
    @property
    def delta_min(self):
        return self.levels[0].delta

    @property
    def delta_max(self):
        return self.levels[-1].delta

    @property
    def theta_regressor(self):
        return self.regressor.theta

    def _clamp(self, delta, warn=True):
        if delta < self.delta_min or delta > self.delta_max:
            if warn:
                warnings.warn(
                    f"delta={delta:.6g} outside calibrated range "
                    f"[{self.delta_min:.6g}, {self.delta_max:.6g}]; clamped",
                    QuantileClampWarning,
                    stacklevel=3,
                )
            return float(np.clip(delta, self.delta_min, self.delta_max))
        return float(delta)

    def beta_hat(self, delta):
        return float(_interp(self.knot_deltas, self.knot_betas, self._clamp(delta, warn=False)))

    def theta_hat(self, delta):
        vec = _interp(self.knot_deltas, self.knot_thetas, self._clamp(delta, warn=False))
        return Hyperparameters.from_vector(vec)

    # -- evaluation ---------------------------------------------------------
    def _chol(self, tv):
        key = tv.tobytes()
        L = self._chol_cache.get(key)
        if L is None:
            Xtr = self.regressor.training_inputs
            A = ARD_SE.matrix(tv, Xtr)
            A[np.diag_indices_from(A)] += self.regressor.noise_std**2
            L, _ = cholesky_with_jitter(A)
            if len(self._chol_cache) > 256:
                self._chol_cache.clear()
            self._chol_cache[key] = L
        return L

    def sigma(self, theta_vec, X):
        """Posterior std on the regressor's training inputs under ``theta_vec``."""
        tv = np.asarray(theta_vec, float)
        X = np.atleast_2d(np.asarray(X, float))
        L = self._chol(tv)
        Ks = ARD_SE.matrix(tv, X, self.regressor.training_inputs)
        V = solve_triangular(L, Ks.T, lower=True, check_finite=False)
        s2 = self.regressor.noise_std**2
        return np.sqrt(np.maximum(np.exp(2.0 * tv[0]) - np.einsum("ij,ij->j", V, V), 0.0) + s2)

    def mean(self, X):
        return self.regressor.mean(np.atleast_2d(np.asarray(X, float)))

    def offset(self, delta, X, warn=True):
        """``beta_hat(delta) * sigma(theta_hat(delta), X)``: quantile minus mean."""
        delta = self._clamp(delta, warn)
        b = _interp(self.knot_deltas, self.knot_betas, delta)
        if b == 0.0:
            return np.zeros(np.atleast_2d(X).shape[0])
        tv = _interp(self.knot_deltas, self.knot_thetas, delta)
        return b * self.sigma(tv, X)

    def quantile(self, delta, X, warn=True):
        """Predictive ``delta``-quantile at each row of ``X``."""
        return self.mean(X) + self.offset(delta, X, warn)

    def cdf(self, X, y, exact=False, nodes=7):
        """Calibrated CDF level of ``y`` at ``X`` (inverse of :meth:`quantile`).

        Values outside the representable quantile range are clamped to the
        first or last level. The default path interpolates ``sigma`` inside
        each knot segment on Chebyshev nodes, refined until it agrees with the
        exact std to 1e-11 relative; ``exact=True`` root-finds on the exact
        quantile instead (slow).
        """
        X = np.atleast_2d(np.asarray(X, float))
        y = np.broadcast_to(np.asarray(y, float), (X.shape[0],)).copy()
        off = y - self.mean(X)
        kd = self.knot_deltas
        Q = np.array([self.offset(d, X, warn=False) for d in kd])
        cnt = np.sum(Q <= off[None, :], axis=0)
        out = np.empty(X.shape[0])
        out[cnt == 0] = kd[0]
        out[cnt == len(kd)] = kd[-1]
        inner = np.nonzero((cnt > 0) & (cnt < len(kd)))[0]
        hit = Q[cnt[inner] - 1, inner] == off[inner]
        out[inner[hit]] = kd[cnt[inner[hit]] - 1]
        inner = inner[~hit]
        if exact:
            for t in inner:
                s = cnt[t] - 1
                f = lambda d, t=t: float(self.offset(d, X[t : t + 1], warn=False)[0] - off[t])
                out[t] = brentq(f, kd[s], kd[s + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            return out
        seg = cnt[inner] - 1
        for s in np.unique(seg):
            idx = inner[seg == s]
            a, b = kd[s], kd[s + 1]
            fit = self._segment_sigma(X[idx], a, b, nodes)
            if fit is None:
                out[idx] = self.cdf(X[idx], y[idx], exact=True)
                continue
            xn, wn, S = fit
            ba, bb = self.knot_betas[s], self.knot_betas[s + 1]
            lo = np.full(idx.size, a)
            hi = np.full(idx.size, b)
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                beta = ba + (mid - a) / (b - a) * (bb - ba)
                q = beta * _barycentric(xn, wn, S, mid)
                below = q <= off[idx]
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            out[idx] = 0.5 * (lo + hi)
        return out

    def _segment_sigma(self, X, a, b, nodes, tol=1e-11, max_nodes=129):
        """Chebyshev-Lobatto samples of ``sigma(theta_hat(delta), X)`` on ``[a, b]``.

        Nodes double until the interpolant matches exact values at the next
        level's new nodes to ``tol`` relative; ``None`` if ``max_nodes`` is hit.
        """
        kd, kt = self.knot_deltas, self.knot_thetas
        n = nodes
        xn, wn = _cheb_lobatto(a, b, n)
        S = np.array([self.sigma(_interp(kd, kt, d), X) for d in xn])
        while True:
            x2, w2 = _cheb_lobatto(a, b, 2 * n - 1)
            new = x2[1::2]
            S_new = np.array([self.sigma(_interp(kd, kt, d), X) for d in new])
            approx = np.array([_barycentric(xn, wn, S, np.full(X.shape[0], d)) for d in new])
            if np.max(np.abs(approx - S_new)) <= tol * np.max(S):
                return xn, wn, S
            if 2 * n - 1 > max_nodes:
                return None
            S2 = np.empty((2 * n - 1, X.shape[0]))
            S2[0::2], S2[1::2] = S, S_new
            xn, wn, S, n = x2, w2, S2, 2 * n - 1

    # -- diagnostics --------------------------------------------------------
    def in_sample_coverage(self):
        """Per level, how many calibration z-scores lie at or below ``beta``."""
        ev = StdEvaluator(self.regressor.training_inputs, self.regressor.noise_std, self.cal_inputs)
        counts = []
        for lv in self.levels:
            z = self.cal_residuals / ev(lv.theta.vector)
            counts.append(int(np.sum(z <= lv.beta)))
        return np.array(counts)

    def max_monotonicity_violation(self, X, deltas=None):
        """Largest decrease of ``delta -> quantile(delta, x)`` over a delta grid and rows of X."""
        if deltas is None:
            inner = np.linspace(self.delta_min, self.delta_max, 101)
            deltas = np.unique(np.concatenate((inner, self.knot_deltas)))
        Q = np.array([self.offset(d, X, warn=False) for d in deltas])
        return float(max(np.max(Q[:-1] - Q[1:]), 0.0)) if len(deltas) > 1 else 0.0

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        zc = None
        if self.zero_crossing is not None:
            zc = {"delta": self.zero_crossing[0], "theta": self.zero_crossing[1].to_dict()}
        return {
            "format": "calgp/1",
            "kind": "calibrated_gp",
            "regressor": self.regressor.to_dict(),
            "levels": [lv.to_dict() for lv in self.levels],
            "zero_crossing": zc,
            "cal_inputs": self.cal_inputs.tolist(),
            "cal_residuals": self.cal_residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "calibrated_gp":
            raise ValueError(f"not a calibrated_gp document: kind={d.get('kind')!r}")
        zc = d.get("zero_crossing")
        if zc is not None:
            zc = (float(zc["delta"]), Hyperparameters.from_dict(zc["theta"]))
        return cls(
            tuple(CalibrationLevel.from_dict(lv) for lv in d["levels"]),
            PosteriorState.from_dict(d["regressor"]),
            np.asarray(d["cal_inputs"], float),
            np.asarray(d["cal_residuals"], float),
            zc,
        )

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _validate_grid(deltas):
    deltas = np.asarray(deltas, float).ravel()
    if deltas.size == 0:
        raise ValueError("empty delta grid")
    if np.any(deltas <= 0) or np.any(deltas >= 1):
        raise ValueError("confidence levels must lie strictly inside (0, 1)")
    if np.any(np.diff(deltas) <= 0):
        raise ValueError("confidence levels must be strictly increasing")
    return deltas


def calibrate_all(deltas, cal_data, regressor, config=None):
    """Train calibration hyperparameters for a grid of levels and interpolate them.

    Levels are split by the sign of their ``beta`` under the regressor's own
    hyperparameters. Each side is solved as a chain: with ``order="inward"``
    the outermost level is solved first and every level further in is bounded
    above componentwise by its outer neighbour; with ``order="outward"`` the
    chain starts next to the median and every outer level is bounded below by
    its inner neighbour; ``"auto"`` runs both and keeps the one with the lower
    total loss. Either way theta grows away from the sign change, which
    together with the monotone effect of theta on the posterior variance makes
    every quantile curve monotone in ``delta``. With ``config.anchored`` a
    chain is discarded if any level breaks the beta ordering or ends with a
    higher loss than under the regressor's hyperparameters; plain rescaling
    of those hyperparameters is always a valid chain. ``deltas=None`` uses
    ``j / (N_cal + 1)`` thinned to ``config.grid_cap`` levels.
    """
    config = config or CalibrationConfig()
    if cal_data.d != regressor.theta.dim:
        raise ValueError("calibration data dimension does not match the regressor")
    if deltas is None:
        deltas = theorem_grid(cal_data.n, config.grid_cap)
    deltas = _validate_grid(deltas)

    r = residuals(cal_data, regressor)
    full = _evaluator(cal_data, regressor)
    opt_ev = full
    if config.subset_cap is not None and regressor.n > config.subset_cap:
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(regressor.n, config.subset_cap, replace=False))
        opt_ev = StdEvaluator(regressor.training_inputs[keep], regressor.noise_std, cal_data.inputs)

    ref = regressor.theta.vector
    z_ref = r / full(ref)
    beta_ref = np.array([q_lin(d, z_ref) for d in deltas])
    pos = [i for i in range(deltas.size) if beta_ref[i] >= 0]
    neg = [i for i in range(deltas.size) if beta_ref[i] < 0]
    orders = ("inward", "outward") if config.order == "auto" else (config.order,)

    sig_ref = full(ref)
    ref_losses = beta_ref**2 * np.sum(sig_ref**2)
    cap = ref_losses * (1.0 + 1e-12) if config.anchored else None

    solved = {}
    for sign, side in ((1, pos), (-1, neg)):
        # pure rescaling of theta_R is always a valid chain
        best = (float(np.sum(ref_losses[side])),
                {i: (ref, beta_ref[i], float(ref_losses[i]), False, None) for i in side})
        for order in orders:
            run = _run_chain(side, sign, order == "outward", deltas, r, ref, full, opt_ev,
                             config, cap)
            if run is None:
                continue
            total = sum(v[2] for v in run.values())
            logger.debug("side %+d order %s: total loss %.6g", sign, order, total)
            if total < best[0]:
                best = (total, run)
        solved.update(best[1])

    vecs = [solved[i][0] for i in range(deltas.size)]
    betas = np.array([solved[i][1] for i in range(deltas.size)])
    zero_crossing = None
    zero = np.nonzero(betas == 0.0)[0]
    if zero.size:
        block = list(range(zero[0], zero[-1] + 1))
        nbrs = [j for j in (block[0] - 1, block[-1] + 1) if 0 <= j < deltas.size]
        floor_vec = np.min([vecs[j] for j in block + nbrs], axis=0)
        for j in block:
            vecs[j] = floor_vec
    elif neg and pos:
        n_i, p_i = neg[-1], pos[0]
        bn, bp = betas[n_i], betas[p_i]
        d0 = deltas[n_i] + (-bn) / (bp - bn) * (deltas[p_i] - deltas[n_i])
        zero_crossing = (float(d0), Hyperparameters.from_vector(np.minimum(vecs[n_i], vecs[p_i])))

    levels = tuple(
        CalibrationLevel(float(deltas[i]), float(betas[i]), Hyperparameters.from_vector(vecs[i]),
                         solved[i][2], solved[i][3], solved[i][4])
        for i in range(deltas.size)
    )
    _check_structure(levels)
    return CalibrationModel(levels, regressor, np.array(cal_data.inputs), r, zero_crossing)


def _run_chain(side, sign, outward, deltas, r, ref, full, opt_ev, config, ref_losses=None):
    """Solve one sign side as a monotone chain.

    Returns ``{index: (vec, beta, loss, repaired, warning)}``, or None when
    some level has no candidate that keeps the beta ordering (and, given
    ``ref_losses``, does no worse than theta_R).

    Moving away from the sign change theta may only grow. ``outward`` starts
    next to the median and bounds each level below by its inner neighbour;
    otherwise the outermost level starts and each inner level is bounded
    above by its outer neighbour. When ``config.anchored`` the search is kept
    on the side of theta_R that makes theta_R feasible for every level
    (theta <= theta_R outward, theta >= theta_R inward).
    """
    box_lo, box_hi = ref - config.span, ref + config.span
    if config.anchored:
        if outward:
            box_hi = ref.copy()
        else:
            box_lo = ref.copy()
    chain = side if (sign > 0) == outward else side[::-1]
    out = {}
    prev_vec, prev_beta = None, None
    for i in chain:
        obj = _Objective(deltas[i], r, opt_ev)
        lo, hi = box_lo, box_hi
        if prev_vec is None:
            s = config.line_search_span
            c_lo, c_hi = (-s, 0.0) if config.anchored and outward else (-s, s)
            if config.anchored and not outward:
                c_lo = 0.0
            ls, _ = _line_search(obj, ref, c_lo, c_hi, config.line_search_points)
            cands = [ref, ls]
        else:
            if outward:
                lo = np.minimum(np.maximum(box_lo, prev_vec), box_hi)
            else:
                hi = np.maximum(np.minimum(box_hi, prev_vec), box_lo)
            cands = [prev_vec, np.clip(ref, lo, hi)]
            if config.mode == "line-search":
                c_lo, c_hi = float(np.max(lo - ref)), float(np.min(hi - ref))
                if c_hi >= c_lo:
                    ls, _ = _line_search(obj, ref, c_lo, c_hi, config.line_search_points)
                    cands.append(ls)
        key = [config.seed, i, int(outward)]
        cands += _random_candidates(lo, hi, config.random_starts, key)
        ranked, warn = _solve(obj, cands, lo, hi, config)
        if prev_vec is not None:
            ranked.append((np.inf, prev_vec))
        repaired = False
        for rank, (_, vec) in enumerate(ranked):
            beta = q_lin(deltas[i], r / full(vec))
            sig = full(vec)
            loss = float(beta * beta * np.sum(sig * sig))
            if _consistent(beta, sign, prev_beta, outward) and (
                ref_losses is None or loss <= ref_losses[i]
            ):
                repaired = rank > 0
                break
        else:
            logger.info("%s chain failed at level %.4g", "outward" if outward else "inward",
                        deltas[i])
            return None
        if repaired:
            logger.info("level %.4g: best theta broke the ordering; used runner-up", deltas[i])
        out[i] = (vec, beta, loss, repaired, warn)
        prev_vec, prev_beta = vec, beta
    return out


def _consistent(beta, sign, prev_beta, outward):
    if (beta < 0) if sign > 0 else (beta > 0):
        return False
    if prev_beta is None:
        return True
    # the chain moves up in delta on the positive side when outward
    ascending = (sign > 0) == outward
    return beta >= prev_beta if ascending else beta <= prev_beta


def _check_structure(levels):
    for a, b in zip(levels[:-1], levels[1:]):
        if b.beta < a.beta:
            raise CalibrationError(f"beta decreases at delta={b.delta:.6g}", level=b.delta)
        if a.beta >= 0 and not a.theta <= b.theta:
            raise CalibrationError(f"theta decreases at delta={b.delta:.6g}", level=b.delta)
        if b.beta < 0 and not a.theta >= b.theta:
            raise CalibrationError(f"theta increases at delta={b.delta:.6g}", level=b.delta)
