"""Exact Gaussian-process regression with an ARD squared-exponential kernel.

Hyperparameters live in log space: ``theta = (log a, log(1/l_1), ..., log(1/l_d))``
where ``a`` is the signal amplitude and ``l_i`` are lengthscales. Increasing any
coordinate of ``theta`` increases the posterior variance of the SE kernel, which
is the ordering the calibration module relies on. The noise level ``sigma0`` is
kept outside ``theta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .exceptions import DataError, NumericalError, OptimizationError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a, ndim):
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs and targets plus the standardization that produced them.

    ``inputs`` and ``targets`` are in standardized units. The raw values are
    ``inputs * feature_stds + feature_means`` and
    ``targets * target_std + target_mean``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    feature_means: np.ndarray = None
    feature_stds: np.ndarray = None
    target_mean: float = 0.0
    target_std: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.targets, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"inputs must be a non-empty N x d matrix, got {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} input rows but {y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("inputs and targets must be finite")
        d = X.shape[1]
        means = np.zeros(d) if self.feature_means is None else self.feature_means
        stds = np.ones(d) if self.feature_stds is None else self.feature_stds
        means = np.asarray(means, dtype=float).ravel()
        stds = np.asarray(stds, dtype=float).ravel()
        if means.shape != (d,) or stds.shape != (d,):
            raise DataError("standardization vectors must have one entry per feature")
        if np.any(stds <= 0) or not self.target_std > 0:
            raise DataError("standardization scales must be strictly positive")
        object.__setattr__(self, "inputs", _frozen(X, 2))
        object.__setattr__(self, "targets", _frozen(y, 1))
        object.__setattr__(self, "feature_means", _frozen(means, 1))
        object.__setattr__(self, "feature_stds", _frozen(stds, 1))
        object.__setattr__(self, "target_mean", float(self.target_mean))
        object.__setattr__(self, "target_std", float(self.target_std))

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1]

    def subset(self, index):
        """Rows ``index``, keeping the standardization metadata."""
        index = np.asarray(index)
        return replace(self, inputs=self.inputs[index], targets=self.targets[index])

    def standardize_like(self, raw_inputs, raw_targets):
        """Apply this dataset's standardization to raw values."""
        X = (np.atleast_2d(np.asarray(raw_inputs, float)) - self.feature_means) / self.feature_stds
        y = (np.asarray(raw_targets, float).ravel() - self.target_mean) / self.target_std
        return replace(self, inputs=X, targets=y)

    def raw_targets(self):
        return self.targets * self.target_std + self.target_mean


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """Log signal amplitude and log inverse lengthscales (the vector theta).

    Comparison operators implement the componentwise partial order, so
    ``theta <= other`` holds iff every coordinate is <= the other's.
    """

    log_signal_amplitude: float
    log_inverse_lengthscales: np.ndarray

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.log_inverse_lengthscales, dtype=float))
        la = float(self.log_signal_amplitude)
        if eta.ndim != 1 or eta.size < 1:
            raise ValueError("need at least one inverse lengthscale")
        if not (np.isfinite(la) and np.all(np.isfinite(eta))):
            raise ValueError("hyperparameters must be finite")
        object.__setattr__(self, "log_signal_amplitude", la)
        object.__setattr__(self, "log_inverse_lengthscales", _frozen(eta, 1))

    @classmethod
    def from_natural(cls, amplitude, lengthscales):
        return cls(np.log(amplitude), -np.log(np.atleast_1d(np.asarray(lengthscales, float))))

    @classmethod
    def from_vector(cls, vector):
        v = np.asarray(vector, dtype=float).ravel()
        return cls(v[0], v[1:])

    @property
    def vector(self):
        return np.concatenate(([self.log_signal_amplitude], self.log_inverse_lengthscales))

    @property
    def dim(self):
        return self.log_inverse_lengthscales.size

    @property
    def amplitude(self):
        return float(np.exp(self.log_signal_amplitude))

    @property
    def lengthscales(self):
        return np.exp(-self.log_inverse_lengthscales)

    def __eq__(self, other):
        if not isinstance(other, Hyperparameters):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.vector, other.vector)

    def __hash__(self):
        return hash(self.vector.tobytes())

    def __le__(self, other):
        return bool(np.all(self.vector <= other.vector))

    def __ge__(self, other):
        return bool(np.all(self.vector >= other.vector))

    def to_dict(self):
        return {
            "log_signal_amplitude": self.log_signal_amplitude,
            "log_inverse_lengthscales": self.log_inverse_lengthscales.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["log_signal_amplitude"], d["log_inverse_lengthscales"])

    def __repr__(self):
        return (
            f"Hyperparameters(amplitude={self.amplitude:.4g}, "
            f"lengthscales={np.array2string(self.lengthscales, precision=4)})"
        )


class ARDSquaredExponential:
    """k(x, x') = a^2 exp(-1/2 sum_i ((x_i - x'_i) / l_i)^2).

    The only kernel shipped; other stationary kernels would implement the
    same three methods.
    """

    name = "ard_se"

    def matrix(self, theta_vec, X, X2=None):
        theta_vec = np.asarray(theta_vec, float)
        scale = np.exp(theta_vec[1:])
        A = X * scale
        B = A if X2 is None else X2 * scale
        return np.exp(2.0 * theta_vec[0] - 0.5 * cdist(A, B, "sqeuclidean"))

    def diag(self, theta_vec, X):
        return np.full(X.shape[0], np.exp(2.0 * theta_vec[0]))

    def pair(self, theta_vec, x, x2):
        scale = np.exp(np.asarray(theta_vec, float)[1:])
        r2 = float(np.sum(((x - x2) * scale) ** 2))
        return float(np.exp(2.0 * theta_vec[0] - 0.5 * r2))


ARD_SE = ARDSquaredExponential()


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = np.atleast_2d(x) if x.ndim <= 1 else x
    if x.ndim == 1 and d is not None and x.size != d:
        raise ValueError(f"point has {x.size} coordinates, hyperparameters expect {d}")
    if X.ndim != 2 or (d is not None and X.shape[1] != d):
        raise ValueError(f"points have shape {X.shape}, hyperparameters expect d={d}")
    return X, single


def kernel_eval(theta, x, x2):
    """Covariance between two single points."""
    x = np.atleast_1d(np.asarray(x, float))
    x2 = np.atleast_1d(np.asarray(x2, float))
    if x.shape != (theta.dim,) or x2.shape != (theta.dim,):
        raise ValueError(
            f"points of shape {x.shape} and {x2.shape} do not match d={theta.dim}"
        )
    return ARD_SE.pair(theta.vector, x, x2)


def gram_matrix(theta, inputs, inputs2=None):
    X, _ = _as_points(inputs, theta.dim)
    if X.shape[0] == 0:
        raise ValueError("inputs must be non-empty")
    if inputs2 is None:
        return ARD_SE.matrix(theta.vector, X)
    X2, _ = _as_points(inputs2, theta.dim)
    return ARD_SE.matrix(theta.vector, X, X2)


def cholesky_with_jitter(A):
    """Lower Cholesky factor of ``A``, adding diagonal jitter on failure.

    The ladder starts at 1e-10 * trace/N and grows by 10x up to 1e-4 * trace/N.
    Returns ``(L, jitter)``.
    """
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix to factorize has non-finite entries", jitter=0.0)
    try:
        return cholesky(A, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    n = A.shape[0]
    base = np.trace(A) / n
    jitter = 1e-10 * base
    last = jitter
    while jitter <= 1e-4 * base * (1 + 1e-9):
        try:
            L = cholesky(A + jitter * np.eye(n), lower=True, check_finite=False)
            logger.debug("cholesky needed jitter %.3g", jitter)
            return L, jitter
        except LinAlgError:
            last = jitter
            jitter *= 10.0
    raise NumericalError(f"Cholesky failed with jitter up to {last:.3g}", jitter=last)


@dataclass(frozen=True, eq=False)
class PosteriorState:
    """A GP conditioned on training data; evaluates posterior mean and std.

    ``std`` is the predictive std of a new noisy observation, so it includes
    the noise variance and is never below ``noise_std``.
    """

    training_inputs: np.ndarray
    training_targets: np.ndarray
    theta: Hyperparameters
    noise_std: float
    chol: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0

    @property
    def n(self):
        return self.training_inputs.shape[0]

    def cross_cov(self, X):
        return ARD_SE.matrix(self.theta.vector, X, self.training_inputs)

    def mean(self, X):
        X, _ = _as_points(X, self.theta.dim)
        return self.cross_cov(X) @ self.weights

    def var(self, X):
        X, _ = _as_points(X, self.theta.dim)
        V = solve_triangular(self.chol, self.cross_cov(X).T, lower=True, check_finite=False)
        prior = ARD_SE.diag(self.theta.vector, X)
        latent = np.maximum(prior - np.einsum("ij,ij->j", V, V), 0.0)
        return latent + self.noise_std**2

    def std(self, X):
        return np.sqrt(self.var(X))

    def mean_and_std(self, X):
        X, _ = _as_points(X, self.theta.dim)
        Ks = self.cross_cov(X)
        V = solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        prior = ARD_SE.diag(self.theta.vector, X)
        latent = np.maximum(prior - np.einsum("ij,ij->j", V, V), 0.0)
        return Ks @ self.weights, np.sqrt(latent + self.noise_std**2)

    def with_theta(self, theta):
        """Same training data and noise, different kernel hyperparameters."""
        return _fit(self.training_inputs, self.training_targets, theta, self.noise_std)

    def to_dict(self):
        return {
            "theta": self.theta.to_dict(),
            "noise_std": self.noise_std,
            "training_inputs": self.training_inputs.tolist(),
            "training_targets": self.training_targets.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return _fit(
            np.asarray(d["training_inputs"], float),
            np.asarray(d["training_targets"], float),
            Hyperparameters.from_dict(d["theta"]),
            float(d["noise_std"]),
        )


def _fit(X, y, theta, sigma0):
    if not sigma0 > 0:
        raise ValueError(f"noise std must be positive, got {sigma0}")
    X = _frozen(X, 2)
    y = _frozen(y, 1)
    A = ARD_SE.matrix(theta.vector, X)
    A[np.diag_indices_from(A)] += sigma0**2
    L, jitter = cholesky_with_jitter(A)
    w = cho_solve((L, True), y, check_finite=False)
    L.setflags(write=False)
    w.setflags(write=False)
    return PosteriorState(X, y, theta, float(sigma0), L, w, jitter)


def fit_posterior(data, theta, sigma0):
    """Condition a zero-mean GP with kernel ``theta`` and noise ``sigma0`` on ``data``."""
    if theta.dim != data.d:
        raise ValueError(f"theta has d={theta.dim}, data has d={data.d}")
    return _fit(data.inputs, data.targets, theta, sigma0)


def posterior_mean(state, xstar):
    X, single = _as_points(xstar, state.theta.dim)
    m = state.mean(X)
    return float(m[0]) if single else m


def posterior_std(state, xstar):
    X, single = _as_points(xstar, state.theta.dim)
    s = state.std(X)
    return float(s[0]) if single else s


def predictive_std(train_inputs, theta, sigma0, query):
    """Posterior std at ``query`` for a GP on ``train_inputs``; targets do not enter."""
    return StdEvaluator(train_inputs, sigma0, query)(theta.vector)


def _pairwise_sqdiff(X, X2=None):
    X2 = X if X2 is None else X2
    return (X[:, None, :] - X2[None, :, :]) ** 2


def log_marginal_likelihood(data, theta, sigma0, grad=False, noise_grad=False):
    """Log evidence of ``data`` under the GP; optionally its gradient.

    The gradient is taken with respect to ``theta.vector`` (log coordinates)
    and, when ``noise_grad`` is set, additionally with respect to
    ``log(sigma0)`` as the last entry.
    """
    if not sigma0 > 0:
        raise ValueError(f"noise std must be positive, got {sigma0}")
    X, y = data.inputs, data.targets
    n = X.shape[0]
    tv = theta.vector
    K = ARD_SE.matrix(tv, X)
    A = K.copy()
    A[np.diag_indices_from(A)] += sigma0**2
    L, _ = cholesky_with_jitter(A)
    alpha = cho_solve((L, True), y, check_finite=False)
    value = -np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI - 0.5 * y @ alpha
    if not (grad or noise_grad):
        return float(value)
    Ainv = cho_solve((L, True), np.eye(n), check_finite=False)
    M = np.outer(alpha, alpha) - Ainv
    MK = M * K
    g = np.empty(tv.size + (1 if noise_grad else 0))
    g[0] = np.sum(MK)
    D = _pairwise_sqdiff(X)
    g[1 : tv.size] = -0.5 * np.exp(2.0 * tv[1:]) * np.einsum("ij,ijk->k", MK, D)
    if noise_grad:
        g[-1] = sigma0**2 * np.trace(M)
    return float(value), g


@dataclass
class OptimizerConfig:
    """Settings for marginal-likelihood maximization."""

    restarts: int = 5
    max_iter: int = 500
    gtol: float = 1e-5
    seed: int = 0


def _default_bounds(X, y):
    span = np.ptp(X, axis=0)
    span = np.where(span > 0, span, 1.0)
    sy = float(np.std(y)) or 1.0
    lo = np.concatenate(([np.log(1e-3 * sy)], -np.log(50.0 * span), [np.log(1e-3 * sy)]))
    hi = np.concatenate(([np.log(1e2 * sy)], -np.log(1e-2 * span), [np.log(10.0 * sy)]))
    return lo, hi


def _random_start(rng, X, y):
    span = np.ptp(X, axis=0)
    span = np.where(span > 0, span, 1.0)
    sy = float(np.std(y)) or 1.0
    ell = span * np.exp(rng.uniform(np.log(0.05), np.log(2.0), size=span.size))
    amp = sy * np.exp(rng.uniform(np.log(0.1), np.log(2.0)))
    noise = sy * np.exp(rng.uniform(np.log(0.01), np.log(0.5)))
    return np.concatenate(([np.log(amp)], -np.log(ell), [np.log(noise)]))


def optimize_hyperparameters(data, init=None, sigma0_init=None, config=None):
    """Maximize the log marginal likelihood over theta and sigma0 jointly.

    Runs L-BFGS-B from ``init`` and from ``config.restarts`` random starts and
    keeps the best optimum. Returns ``(theta, sigma0)``.
    """
    config = config or OptimizerConfig()
    rng = np.random.default_rng(config.seed)
    X, y = data.inputs, data.targets
    lo, hi = _default_bounds(X, y)

    starts = []
    if init is not None:
        s0 = sigma0_init if sigma0_init is not None else 0.1 * (float(np.std(y)) or 1.0)
        starts.append(np.concatenate((init.vector, [np.log(s0)])))
    starts += [_random_start(rng, X, y) for _ in range(config.restarts)]

    def negative_lml(v):
        try:
            val, g = log_marginal_likelihood(
                data, Hyperparameters.from_vector(v[:-1]), float(np.exp(v[-1])), noise_grad=True
            )
        except NumericalError:
            return 1e25, np.zeros_like(v)
        return -val, -g

    best_v, best_f = None, np.inf
    for v0 in starts:
        v0 = np.clip(v0, lo, hi)
        f0 = negative_lml(v0)[0]
        try:
            res = minimize(
                negative_lml,
                v0,
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
                options={"maxiter": config.max_iter, "gtol": config.gtol},
            )
        except (ValueError, FloatingPointError) as exc:
            logger.warning("LML restart failed: %s", exc)
            continue
        v, f = (res.x, res.fun) if res.fun <= f0 else (v0, f0)
        if f < best_f:
            best_v, best_f = v, f
    if best_v is None or best_f >= 1e25:
        raise OptimizationError("all marginal-likelihood restarts failed")
    return Hyperparameters.from_vector(best_v[:-1]), float(np.exp(best_v[-1]))


class StdEvaluator:
    """Posterior std at fixed query points as a function of theta.

    Training inputs and noise are fixed, so this is the map
    ``theta -> sigma(theta, query)``. Calling with ``grad=True`` also returns a
    vector-Jacobian product ``h -> sum_m h_m d sigma_m / d theta``, which costs
    O(N^2 M + N^2 d) instead of the O(N^2 M d) of a full Jacobian.
    """

    def __init__(self, train_inputs, noise_std, query):
        self.X = np.asarray(train_inputs, float)
        self.Xq = np.atleast_2d(np.asarray(query, float))
        self.noise_std = float(noise_std)
        self._D = None
        self._Dq = None

    @property
    def n_query(self):
        return self.Xq.shape[0]

    def _sqdiffs(self):
        if self._D is None:
            self._D = _pairwise_sqdiff(self.X)
            self._Dq = _pairwise_sqdiff(self.Xq, self.X)
        return self._D, self._Dq

    def __call__(self, theta_vec, grad=False):
        tv = np.asarray(theta_vec, float)
        s2 = self.noise_std**2
        a2 = np.exp(2.0 * tv[0])
        K = ARD_SE.matrix(tv, self.X)
        Ks = ARD_SE.matrix(tv, self.Xq, self.X)
        A = K.copy()
        A[np.diag_indices_from(A)] += s2
        L, _ = cholesky_with_jitter(A)
        V = solve_triangular(L, Ks.T, lower=True, check_finite=False)
        var = np.maximum(a2 - np.einsum("ij,ij->j", V, V), 0.0) + s2
        std = np.sqrt(var)
        if not grad:
            return std
        W = solve_triangular(L.T, V, lower=False, check_finite=False)
        D, Dq = self._sqdiffs()
        scale2 = np.exp(2.0 * tv[1:])

        def vjp(h):
            g = np.asarray(h, float) / (2.0 * std)
            B = (W * g) @ W.T
            CKs = W.T * g[:, None] * Ks
            BK = B * K
            out = np.empty(tv.size)
            out[0] = 2.0 * a2 * g.sum() - 4.0 * CKs.sum() + 2.0 * BK.sum()
            out[1:] = scale2 * (
                2.0 * np.einsum("mn,mnk->k", CKs, Dq) - np.einsum("ij,ijk->k", BK, D)
            )
            return out

        return std, vjp


class LeaveOneOutStd:
    """Leave-one-out predictive std of each training point as a function of theta.

    Uses the closed form ``sigma_i^2 = 1 / [A^-1]_ii`` with ``A = K + sigma0^2 I``.
    """

    def __init__(self, train_inputs, noise_std):
        self.X = np.asarray(train_inputs, float)
        self.noise_std = float(noise_std)
        self._D = _pairwise_sqdiff(self.X)

    @property
    def n_query(self):
        return self.X.shape[0]

    def _inverse(self, tv):
        K = ARD_SE.matrix(tv, self.X)
        A = K.copy()
        A[np.diag_indices_from(A)] += self.noise_std**2
        L, _ = cholesky_with_jitter(A)
        return K, cho_solve((L, True), np.eye(A.shape[0]), check_finite=False)

    def residuals(self, theta_vec, y):
        """LOO residuals ``y_i - mu_{-i}(x_i)``."""
        _, Ainv = self._inverse(np.asarray(theta_vec, float))
        return (Ainv @ y) / np.diag(Ainv)

    def __call__(self, theta_vec, grad=False):
        tv = np.asarray(theta_vec, float)
        K, Ainv = self._inverse(tv)
        dinv = np.diag(Ainv)
        std = 1.0 / np.sqrt(dinv)
        if not grad:
            return std
        scale2 = np.exp(2.0 * tv[1:])

        def vjp(h):
            g = 0.5 * np.asarray(h, float) * dinv**-1.5
            BK = ((Ainv * g) @ Ainv) * K
            out = np.empty(tv.size)
            out[0] = 2.0 * BK.sum()
            out[1:] = -scale2 * np.einsum("ij,ijk->k", BK, self._D)
            return out

        return std, vjp


@dataclass
class MonotonicityReport:
    """Largest decrease of the posterior variance along an increasing theta path."""

    max_violation: float
    worst_probe: int
    worst_step: int
    n_probes: int
    n_steps: int
    tolerance: float
    violated: bool = field(init=False)

    def __post_init__(self):
        self.violated = self.max_violation > self.tolerance


def check_monotonicity(data, theta_low, theta_high, probe_points, sigma0, n_intermediate=10, tol=1e-8):
    """Empirically check that the posterior variance grows from ``theta_low`` to ``theta_high``.

    Evaluates the variance at ``n_intermediate`` points on the log-space
    segment between the two (plus the endpoints) and reports the largest
    decrease between consecutive steps, and between the two endpoints.
    A violation is reported, not raised.
    """
    if not theta_low <= theta_high:
        raise ValueError("theta_low must be componentwise <= theta_high")
    X = data.inputs if isinstance(data, Dataset) else np.asarray(data, float)
    P, _ = _as_points(probe_points, theta_low.dim)
    ev = StdEvaluator(X, sigma0, P)
    s = np.linspace(0.0, 1.0, n_intermediate + 2)
    lo, hi = theta_low.vector, theta_high.vector
    var = np.array([ev(lo + si * (hi - lo)) ** 2 for si in s])
    drops = var[:-1] - var[1:]
    step, probe = np.unravel_index(np.argmax(drops), drops.shape)
    worst = float(drops[step, probe])
    end_drop = var[0] - var[-1]
    if end_drop.max() > worst:
        probe = int(np.argmax(end_drop))
        step = -1
        worst = float(end_drop[probe])
    return MonotonicityReport(max(worst, 0.0), int(probe), int(step), P.shape[0], len(s) - 1, tol)
