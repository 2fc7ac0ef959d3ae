import math

import numpy as np
import pytest

from calgp import bayesopt as bo
from calgp.exceptions import ConfigError
from calgp.gp import Dataset, Hyperparameters, fit_posterior, predictive_std

FAST = bo.BayesOptConfig(n_candidates=256, n_refine=2)


def ackley_by_hand(x, y):
    a = -20 * math.exp(-0.2 * math.sqrt(0.5 * (x * x + y * y)))
    b = -math.exp(0.5 * (math.cos(2 * math.pi * x) + math.cos(2 * math.pi * y)))
    return -(a + b + math.e + 20)


def test_known_optima():
    assert bo.test_function("ackley", [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert bo.test_function("rosenbrock", [1.0, 1.0]) == 0.0


def test_ackley_double_entry():
    assert bo.test_function("ackley", [1.0, 1.0]) == pytest.approx(ackley_by_hand(1.0, 1.0), rel=1e-14)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, (20, 2))
    np.testing.assert_allclose(bo.test_function("ackley", pts), [ackley_by_hand(*p) for p in pts], rtol=1e-13)


def test_functions_below_max():
    pts = np.random.default_rng(1).uniform(-2, 2, (500, 2))
    for name in bo.FUNCTIONS:
        assert np.all(bo.test_function(name, pts) <= bo.F_MAX + 1e-12)


def test_function_errors():
    with pytest.raises(ConfigError):
        bo.test_function("branin", [0.0, 0.0])
    with pytest.raises(ValueError):
        bo.test_function("rosenbrock", [3.0, 0.0])


@pytest.fixture(scope="module")
def state():
    X = np.array([[0.0, 0.0], [1.0, -1.0], [-2.0, 0.5]])
    post = fit_posterior(Dataset(X, np.array([0.5, -1.0, 0.2])), Hyperparameters.from_natural(1.0, [1.0, 1.5]), 0.1)
    return bo.BOState(post, Hyperparameters.from_natural(0.7, [0.5, 0.5]), 1.3, 1.0)


def test_zero_width_limit(state):
    x = np.array([[0.3, 0.2], [-1.0, 2.0]])
    mu = state.posterior.mean(x)
    flat = bo.BOState(state.posterior, state.theta_cal, 0.0, 1.0)
    np.testing.assert_array_equal(bo.acquisition(flat, "calibrated_ucb", x), mu)
    np.testing.assert_array_equal(bo.acquisition(bo.BOState(state.posterior, scale=0.0), "vanilla_ucb", x), mu)


def test_acquisition_composition(state):
    x = np.array([[0.3, 0.2], [-1.0, 2.0]])
    post = state.posterior
    van = bo.acquisition(bo.BOState(post, scale=2.0), "vanilla_ucb", x)
    np.testing.assert_allclose(van, post.mean(x) + 2 * post.std(x), rtol=1e-14)
    cal = bo.acquisition(state, "calibrated_ucb", x)
    sig = predictive_std(post.training_inputs, state.theta_cal, post.noise_std, x)
    np.testing.assert_allclose(cal, post.mean(x) + 1.3 * sig, rtol=1e-14)
    with pytest.raises(ConfigError):
        bo.acquisition(state, "ei", x)


def test_regrets_bookkeeping():
    cum, simple = bo.regrets([-3.0, -1.0, -2.0, 0.0])
    np.testing.assert_array_equal(cum, [3.0, 4.0, 6.0, 6.0])
    np.testing.assert_array_equal(simple, [3.0, 1.0, 1.0, 0.0])


@pytest.mark.parametrize("kind", bo.KINDS)
def test_single_step_trace(kind):
    tr = bo.run_bayesopt("rosenbrock", kind, 1, seed=0, config=FAST)
    assert tr.initial_design.shape == (5, 2)
    assert tr.queries.shape == (1, 2)
    assert len(tr.cumulative_regret) == len(tr.simple_regret) == 1
    assert (tr.beta is None) == (kind == "vanilla_ucb")


@pytest.mark.parametrize("kind", bo.KINDS)
def test_trace_invariants_and_determinism(kind):
    a = bo.run_bayesopt("ackley", kind, 6, seed=3, config=FAST)
    b = bo.run_bayesopt("ackley", kind, 6, seed=3, config=FAST)
    assert a.to_json() == b.to_json()
    assert np.all(np.diff(a.cumulative_regret) >= 0)
    assert np.all(np.diff(a.simple_regret) <= 0)
    assert np.all(a.simple_regret >= 0)
    np.testing.assert_allclose(a.cumulative_regret, np.cumsum(bo.F_MAX - a.true_values))
    lo, hi = bo.FUNCTIONS["ackley"][1:3]
    assert np.all(a.queries >= lo) and np.all(a.queries <= hi)
    np.testing.assert_allclose(a.values - a.true_values, 0, atol=0.1)


def test_constant_shift_invariance(monkeypatch):
    base = bo.run_bayesopt("rosenbrock", "calibrated_ucb", 3, seed=1, config=FAST)
    fn, lo, hi, opt = bo.FUNCTIONS["rosenbrock"]
    monkeypatch.setitem(bo.FUNCTIONS, "rosenbrock", (lambda x: fn(x) + 7.0, lo, hi, opt))
    shifted = bo.run_bayesopt("rosenbrock", "calibrated_ucb", 3, seed=1, config=FAST)
    np.testing.assert_allclose(shifted.queries, base.queries, atol=1e-6)


def test_run_errors():
    with pytest.raises(ConfigError):
        bo.run_bayesopt("ackley", "thompson", 3)
    with pytest.raises(ConfigError):
        bo.run_bayesopt("ackley", "vanilla_ucb", 0)
    with pytest.raises(ConfigError):
        bo.run_bayesopt("sphere", "vanilla_ucb", 3)


def test_csv_export(tmp_path):
    tr = bo.run_bayesopt("ackley", "vanilla_ucb", 2, seed=0, config=FAST)
    p = tmp_path / "t.csv"
    tr.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("t,x0,x1") and len(lines) == 3
