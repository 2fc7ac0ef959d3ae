import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from calgp.baselines import fit_baseline
from calgp.metrics import ece, evaluate, level_grid, observed_confidence, observed_levels, sharpness

# Oracle values computed independently in mpmath: closed-form Gaussian quantities
# and the same trapezoid-plus-tails quadrature evaluated in mpmath.
GAUSS_AVG_STD = 0.9916148737104117
GAUSS_CI95 = 3.919927969080108
GAUSS_NLL0 = 0.9189385332046727


class GaussianCurve:
    """Quantile model ``mu + s * Phi^-1(delta)``, identical at every x."""

    def __init__(self, mu=0.0, s=1.0):
        self.mu, self.s = mu, s

    def quantile(self, delta, X):
        return np.full(np.atleast_2d(X).shape[0], self.mu + self.s * norm.ppf(delta))

    def cdf(self, X, y):
        return norm.cdf((np.asarray(y, float) - self.mu) / self.s)


class StepCurve:
    """Quantile ``delta + shift`` at every x."""

    def __init__(self, shift):
        self.shift = shift

    def quantile(self, delta, X):
        return np.full(np.atleast_2d(X).shape[0], delta + self.shift)


X1 = np.zeros((1, 1))


def test_level_grid():
    np.testing.assert_allclose(level_grid(21), np.arange(21) / 20)
    with pytest.raises(ValueError):
        level_grid(1)


def test_observed_three_of_four():
    X = np.zeros((4, 1))
    y = np.array([-1.0, -2.0, -3.0, 1.0])
    assert observed_confidence(StepCurve(-0.5), X, y, 0.5) == 0.75


def test_observed_all_covered_at_top_level(small_problem):
    _, cal, _, post = small_problem
    rm = fit_baseline("rm", cal, post)
    assert observed_confidence(rm, cal.inputs, cal.targets, rm.delta_max) == 1.0


def test_observed_matches_count(small_problem):
    _, cal, test, post = small_problem
    rk = fit_baseline("rk", cal, post)
    for p in (0.1, 0.35, 0.8):
        q = rk.quantile(p, test.inputs)
        count = sum(1 for yi, qi in zip(test.targets, q) if yi <= qi)
        assert observed_confidence(rk, test.inputs, test.targets, p) == count / test.n


def test_ece_all_ones():
    assert ece(StepCurve(1e300), X1, [0.0]) == pytest.approx(7.175, abs=1e-12)


def test_ece_perfect_small_grid():
    X = np.zeros((2, 1))
    assert ece(StepCurve(-1e-9), X, [0.3, 0.7], m=3) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3), st.integers(2, 30))
def test_ece_non_negative(mu, s, m):
    y = np.random.default_rng(0).standard_normal(30)
    assert ece(GaussianCurve(mu, s), np.zeros((30, 1)), y, m) >= 0.0


def test_observed_monotone(small_model, small_problem):
    _, _, test, _ = small_problem
    obs = observed_levels(small_model, test.inputs, test.targets)
    assert np.all(np.diff(obs) >= 0)


def test_gaussian_standard_oracle():
    avg, nll, ci, nf = sharpness(GaussianCurve(), X1, [0.0])
    assert avg == pytest.approx(1.0, abs=0.01)
    assert nll == pytest.approx(0.9189, abs=0.01)
    assert ci == pytest.approx(3.9199, abs=0.01)
    assert nf == 0
    assert avg == pytest.approx(GAUSS_AVG_STD, rel=1e-10)
    assert ci == pytest.approx(GAUSS_CI95, rel=1e-12)
    assert nll == pytest.approx(GAUSS_NLL0, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_gaussian_random_pairs(seed):
    rng = np.random.default_rng(seed)
    mu, s = rng.normal(0, 3), rng.uniform(0.1, 5)
    avg, nll, ci, _ = sharpness(GaussianCurve(mu, s), X1, [mu])
    assert avg == pytest.approx(s * GAUSS_AVG_STD, rel=1e-10)
    assert avg == pytest.approx(s, rel=0.01)
    assert ci == pytest.approx(s * GAUSS_CI95, rel=1e-12)
    assert nll == pytest.approx(GAUSS_NLL0 + np.log(s), abs=1e-6)


def test_point_mass_width():
    _, _, ci, _ = sharpness(GaussianCurve(0.0, 1e-3 / 3.92), X1, [0.0])
    assert ci <= 1e-3


def test_density_floor_flag():
    _, nll, _, nf = sharpness(GaussianCurve(0.0, 0.01), X1, [50.0])
    assert nf == 1 and nll == pytest.approx(-np.log(1e-12))


def test_rm_ci_constant(small_problem):
    _, cal, test, post = small_problem
    rm = fit_baseline("rm", cal, post)
    w = rm.quantile(0.975, test.inputs, warn=False) - rm.quantile(0.025, test.inputs, warn=False)
    assert np.ptp(w) <= 1e-12


def test_evaluate_report(small_model, small_problem, tmp_path):
    _, _, test, _ = small_problem
    rep = evaluate(small_model, test.inputs, test.targets)
    assert len(rep.observed) == 21
    assert rep.ece == pytest.approx(sum((p - q) ** 2 for p, q in rep.observed), rel=1e-12)
    assert all(0.0 <= q <= 1.0 for _, q in rep.observed)
    assert rep.avg_std > 0 and rep.ci95_width > 0
    path = tmp_path / "rel.csv"
    rep.write_reliability_csv(path)
    assert path.read_text().splitlines()[0] == "nominal,observed"
