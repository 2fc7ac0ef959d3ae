"""Upper-confidence-bound Bayesian optimization with a calibrated width.

The vanilla rule maximizes ``mu(x) + 2 sigma_R(x)``. The calibrated rule
maximizes ``mu(x) + beta * sigma(theta_delta, x)`` where ``(beta, theta_delta)``
come from a single-level sharpness calibration at ``delta`` on leave-one-out
scores of the initial design. All hyperparameters are fit once after the
initial design and then frozen; only the posterior is updated.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .calibration import CalibrationConfig, solve_level
from .exceptions import ConfigError, NumericalError
from .gp import Dataset, LeaveOneOutStd, OptimizerConfig, fit_posterior, optimize_hyperparameters, predictive_std

logger = logging.getLogger(__name__)

KINDS = ("calibrated_ucb", "vanilla_ucb")


def ackley(x):
    x = np.asarray(x, float)
    r = np.sqrt(0.5 * np.sum(x * x, axis=-1))
    c = 0.5 * np.sum(np.cos(2.0 * np.pi * x), axis=-1)
    return -(-20.0 * np.exp(-0.2 * r) - np.exp(c) + np.e + 20.0)


def rosenbrock(x):
    x = np.asarray(x, float)
    return -((1.0 - x[..., 0]) ** 2 + 100.0 * (x[..., 1] - x[..., 0] ** 2) ** 2)


# name -> (negated function, lower corner, upper corner, maximizer)
FUNCTIONS = {
    "ackley": (ackley, np.array([-5.0, -5.0]), np.array([5.0, 5.0]), np.array([0.0, 0.0])),
    "rosenbrock": (rosenbrock, np.array([-2.0, -2.0]), np.array([2.0, 2.0]), np.array([1.0, 1.0])),
}
F_MAX = 0.0


def test_function(name, x):
    """Negated 2-D benchmark function; maximum 0 at the known optimum."""
    if name not in FUNCTIONS:
        raise ConfigError(f"unknown test function {name!r}; choose from {sorted(FUNCTIONS)}")
    fn, lo, hi, _ = FUNCTIONS[name]
    x = np.asarray(x, float)
    if x.shape[-1] != 2:
        raise ValueError("test functions take 2-D points")
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError(f"point outside the {name} box [{lo[0]}, {hi[0]}]^2")
    v = fn(x)
    return float(v) if np.ndim(v) == 0 else v


@dataclass
class BayesOptConfig:
    n_init: int = 5
    noise_std: float = 0.01
    delta: float = 0.99
    n_candidates: int = 2048
    n_refine: int = 5
    vanilla_scale: float = 2.0
    calibrated_scale: float = 1.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)


@dataclass
class BOState:
    """Posterior with frozen hyperparameters plus the calibrated width pair."""

    posterior: object
    theta_cal: object = None
    beta: float = 0.0
    scale: float = 1.0


def acquisition(state, model_kind, x):
    """UCB value at each row of ``x`` in standardized target units."""
    x = np.atleast_2d(np.asarray(x, float))
    post = state.posterior
    mu = post.mean(x)
    if model_kind == "vanilla_ucb":
        return mu + state.scale * post.std(x)
    if model_kind == "calibrated_ucb":
        sig = predictive_std(post.training_inputs, state.theta_cal, post.noise_std, x)
        return mu + state.scale * state.beta * sig
    raise ConfigError(f"unknown acquisition kind {model_kind!r}")


@dataclass
class BayesOptTrace:
    function: str
    kind: str
    seed: int
    initial_design: np.ndarray
    initial_values: np.ndarray
    queries: np.ndarray
    values: np.ndarray
    true_values: np.ndarray
    cumulative_regret: np.ndarray
    simple_regret: np.ndarray
    beta: float | None = None
    theta_cal: dict | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "function": self.function,
            "kind": self.kind,
            "seed": self.seed,
            "initial_design": self.initial_design.tolist(),
            "initial_values": self.initial_values.tolist(),
            "queries": self.queries.tolist(),
            "values": self.values.tolist(),
            "true_values": self.true_values.tolist(),
            "cumulative_regret": self.cumulative_regret.tolist(),
            "simple_regret": self.simple_regret.tolist(),
            "beta": self.beta,
            "theta_cal": self.theta_cal,
            "warnings": self.warnings,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x0", "x1", "y", "f", "cumulative_regret", "simple_regret"])
            for t in range(len(self.values)):
                wr.writerow([t + 1] + [repr(float(v)) for v in (
                    self.queries[t, 0], self.queries[t, 1], self.values[t], self.true_values[t],
                    self.cumulative_regret[t], self.simple_regret[t])])


def regrets(true_values, f_max=F_MAX):
    """Cumulative and simple regret of a sequence of noiseless query values."""
    gaps = f_max - np.asarray(true_values, float)
    return np.cumsum(gaps), f_max - np.maximum.accumulate(np.asarray(true_values, float))


def run_bayesopt(function_name, kind, budget, seed=0, config=None):
    """Run ``budget`` UCB steps after a random initial design; returns the trace."""
    if kind not in KINDS:
        raise ConfigError(f"unknown acquisition kind {kind!r}; choose from {KINDS}")
    if int(budget) < 1:
        raise ConfigError("budget must be at least 1")
    if function_name not in FUNCTIONS:
        raise ConfigError(f"unknown test function {function_name!r}")
    config = config or BayesOptConfig()
    fn, lo, hi, _ = FUNCTIONS[function_name]
    rng = np.random.default_rng(seed)
    noise = lambda n: config.noise_std * rng.standard_normal(n)

    X0 = lo + (hi - lo) * rng.uniform(size=(config.n_init, 2))
    y0 = fn(X0) + noise(config.n_init)
    y_mean, y_std = float(np.mean(y0)), float(np.std(y0)) or 1.0
    std_y = lambda y: (np.asarray(y) - y_mean) / y_std

    init = Dataset(X0, std_y(y0))
    theta_r, sigma0 = optimize_hyperparameters(init, config=config.optimizer)
    state = BOState(fit_posterior(init, theta_r, sigma0))
    beta, theta_cal_dict = None, None
    if kind == "vanilla_ucb":
        state.scale = config.vanilla_scale
    else:
        loo = LeaveOneOutStd(X0, sigma0)
        res = loo.residuals(theta_r.vector, init.targets)
        level = solve_level(config.delta, theta_r, res, loo, config.calibration)
        state.theta_cal, state.beta, state.scale = level.theta, level.beta, config.calibrated_scale
        beta, theta_cal_dict = level.beta, level.theta.to_dict()

    X, y = [*X0], [*y0]
    queries, notes = [], []
    for t in range(int(budget)):
        try:
            x_next = _argmax(state, kind, lo, hi, [seed, 1, t], config)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            x_next = lo + (hi - lo) * rng.uniform(size=2)
            msg = f"step {t + 1}: degenerate posterior ({exc}); random query"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
        queries.append(x_next)
        X.append(x_next)
        y.append(float(fn(x_next)) + float(noise(1)[0]))
        data = Dataset(np.array(X), std_y(np.array(y)))
        state.posterior = fit_posterior(data, theta_r, sigma0)

    Q = np.array(queries)
    f_true = fn(Q)
    cum, simple = regrets(f_true)
    return BayesOptTrace(function_name, kind, int(seed), X0, np.asarray(y0), Q,
                         np.array(y[config.n_init:]), f_true, cum, simple, beta, theta_cal_dict, notes)


def _argmax(state, kind, lo, hi, key, config):
    sobol = qmc.Sobol(2, scramble=True, seed=np.random.default_rng(key))
    m = int(np.log2(config.n_candidates))
    pts = sobol.random_base2(m) if 2**m == config.n_candidates else sobol.random(config.n_candidates)
    cand = qmc.scale(pts, lo, hi)
    vals = acquisition(state, kind, cand)
    top = np.argsort(-vals, kind="stable")[: config.n_refine]
    best_x, best_v = cand[top[0]], vals[top[0]]
    neg = lambda z: -float(acquisition(state, kind, z[None, :])[0])
    for i in top:
        res = minimize(neg, cand[i], method="L-BFGS-B", bounds=list(zip(lo, hi)),
                       options={"maxiter": 50})
        if np.all(np.isfinite(res.x)) and -res.fun > best_v:
            best_x, best_v = np.clip(res.x, lo, hi), -res.fun
    return np.asarray(best_x, float)
