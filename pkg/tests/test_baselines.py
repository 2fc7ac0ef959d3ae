import numpy as np
import pytest

from calgp.baselines import BaselineModel, fit_baseline, model_from_json
from calgp.calibration import q_lin
from calgp.exceptions import ConfigError, QuantileClampWarning
from calgp.gp import Dataset

KNOT_KINDS = ("rk", "rv", "rm")


@pytest.fixture(scope="module")
def fitted(small_problem):
    _, cal, _, post = small_problem
    return {k: fit_baseline(k, cal, post, seed=11) for k in ("rk", "rv", "rm", "base")}


def test_zero_residuals(small_problem):
    _, cal, _, post = small_problem
    perfect = Dataset(cal.inputs, post.mean(cal.inputs))
    X = np.linspace(-2, 2, 7)[:, None]
    for k in KNOT_KINDS:
        m = fit_baseline(k, perfect, post)
        assert np.all(m.scores == 0.0)
        for d in (0.1, 0.5, 0.9):
            np.testing.assert_array_equal(m.quantile(d, X, warn=False), m.mean(X))


def test_scores_by_hand(small_problem):
    _, _, _, post = small_problem
    X = np.array([[0.4], [-1.1], [1.7]])
    r = np.array([0.3, -0.8, 0.05])
    cal = Dataset(X, post.mean(X) + r)
    rk = fit_baseline("rk", cal, post)
    rm = fit_baseline("rm", cal, post)
    res = cal.targets - post.mean(X)
    np.testing.assert_allclose(rk.scores, np.sort(res / post.std(X)), rtol=1e-15)
    np.testing.assert_allclose(rm.scores, np.sort(res), rtol=1e-15)


def test_knot_values(fitted):
    X = np.random.default_rng(0).uniform(-2, 2, (6, 1))
    rk, rv, rm = fitted["rk"], fitted["rv"], fitted["rm"]
    n = rk.n
    mu, s = rk.mean(X), rk.regressor.std(X)
    for j in (1, 5, 17, n):
        d = j / (n + 1)
        np.testing.assert_array_equal(rk.quantile(d, X), mu + rk.scores[j - 1] * s)
        np.testing.assert_array_equal(rv.quantile(d, X), rk.quantile(d, X))
        np.testing.assert_array_equal(rm.quantile(d, X), mu + rm.scores[j - 1])


def test_rv_differs_between_knots_but_stays_bracketed(fitted):
    rk, rv = fitted["rk"], fitted["rv"]
    n = rk.n
    X = np.zeros((1, 1))
    diffs = []
    for j in range(1, n):
        a, b = j / (n + 1), (j + 1) / (n + 1)
        d = 0.5 * (a + b)
        q = rv.quantile(d, X)[0]
        assert rk.quantile(a, X)[0] <= q <= rk.quantile(b, X)[0]
        diffs.append(q - rk.quantile(d, X)[0])
    assert np.max(np.abs(diffs)) > 0


@pytest.mark.parametrize("kind", ["rk", "rv", "rm", "base"])
def test_monotone_in_delta(fitted, kind):
    m = fitted[kind]
    X = np.linspace(-2, 2, 25)[:, None]
    d = np.linspace(0.001, 0.999, 400)
    Q = np.array([m.quantile(v, X, warn=False) for v in d])
    assert np.all(np.diff(Q, axis=0) >= -1e-12)


@pytest.mark.parametrize("kind", KNOT_KINDS)
def test_in_sample_coverage_at_knots(small_problem, fitted, kind):
    _, cal, _, post = small_problem
    m = fitted[kind]
    n = cal.n
    # counted on scores: mu + r can round below y by one ulp
    scores = cal.targets - post.mean(cal.inputs)
    if kind != "rm":
        scores = scores / post.std(cal.inputs)
    for j in range(1, n + 1):
        level = m.offset(j / (n + 1), np.zeros((1, 1)))[0]
        if kind != "rm":
            level = level / post.std(np.zeros((1, 1)))[0]
        assert np.sum(scores <= q_lin(j / (n + 1), m.scores)) == j
        assert level == pytest.approx(m.scores[j - 1], rel=1e-14)


def test_rm_width_constant(fitted):
    rm = fitted["rm"]
    X = np.linspace(-2, 2, 30)[:, None]
    w = rm.quantile(0.9, X) - rm.quantile(0.1, X)
    assert np.ptp(w) <= 1e-12


@pytest.mark.parametrize("kind", ["rk", "rv", "rm", "base"])
def test_cdf_inverts_quantile(fitted, kind):
    m = fitted[kind]
    rng = np.random.default_rng(2)
    X = rng.uniform(-2, 2, (40, 1))
    d = rng.uniform(m.delta_min + 1e-6, m.delta_max - 1e-6, 40) if kind != "base" else rng.uniform(0.01, 0.99, 40)
    y = np.array([m.quantile(v, X[i : i + 1])[0] for i, v in enumerate(d)])
    np.testing.assert_allclose(m.cdf(X, y), d, atol=1e-9)


def test_clamp_warning(fitted):
    with pytest.warns(QuantileClampWarning):
        fitted["rk"].quantile(0.001, np.zeros((1, 1)))


def test_json_roundtrip(fitted):
    X = np.linspace(-1, 1, 4)[:, None]
    for m in fitted.values():
        back = model_from_json(m.to_json())
        assert isinstance(back, BaselineModel) and back.kind == m.kind
        np.testing.assert_array_equal(back.quantile(0.37, X), m.quantile(0.37, X))


def test_unknown_kind(small_problem):
    _, cal, _, post = small_problem
    with pytest.raises(ConfigError):
        fit_baseline("vovk2", cal, post)


def test_unsorted_scores_rejected(fitted):
    with pytest.raises(ValueError):
        BaselineModel("scaled", fitted["rk"].regressor, np.array([1.0, 0.0]))


def test_rk_matches_q_lin(fitted):
    rk = fitted["rk"]
    X = np.array([[0.2]])
    for d in (0.013, 0.5, 0.71):
        assert rk.offset(d, X, warn=False)[0] == pytest.approx(
            q_lin(d, rk.scores) * rk.regressor.std(X)[0], rel=1e-14)
