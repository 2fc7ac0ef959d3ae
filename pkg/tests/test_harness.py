import json
import os

import numpy as np
import pytest

from calgp.calibration import CalibrationConfig
from calgp.exceptions import ConfigError, DataError
from calgp.gp import Dataset, OptimizerConfig
from calgp.harness import (
    ExperimentConfig,
    apply_standardization,
    load_csv,
    run_experiment,
    split_and_standardize,
    split_sizes,
    standardization_dict,
    synthetic_heteroscedastic,
)

BOSTON = os.path.join(os.path.dirname(__file__), "data", "boston.csv")
FAST_OPT = OptimizerConfig(restarts=1)
FAST_CAL = CalibrationConfig(random_starts=2, grid_cap=9)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_load_two_rows(tmp_path):
    ds = load_csv(write(tmp_path, "x,y\n0,1\n1,2\n"))
    assert (ds.n, ds.d) == (2, 1)
    np.testing.assert_array_equal(ds.targets, [1.0, 2.0])


def test_load_named_target(tmp_path):
    ds = load_csv(write(tmp_path, "y,a,b\n1,0,5\n2,1,6\n3,3,2\n"), target="y")
    np.testing.assert_array_equal(ds.targets, [1, 2, 3])
    np.testing.assert_array_equal(ds.inputs[:, 1], [5, 6, 2])


def test_load_nan_cell_names_location(tmp_path):
    with pytest.raises(DataError) as info:
        load_csv(write(tmp_path, "x,y\n0,1\n1,nan\n"))
    assert info.value.row == 3 and info.value.column == "y"
    assert "line 3" in str(info.value)


def test_load_non_numeric(tmp_path):
    with pytest.raises(DataError) as info:
        load_csv(write(tmp_path, "x,y\nabc,1\n1,2\n"))
    assert info.value.column == "x"


def test_load_drops_constant_feature(tmp_path):
    with pytest.warns(UserWarning, match="constant feature 'c'"):
        ds = load_csv(write(tmp_path, "a,c,y\n0,7,1\n1,7,2\n2,7,0\n"))
    assert ds.d == 1


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        load_csv(str(tmp_path / "missing.csv"))
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "x,y\n1,2,3\n"))
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "x,y\n0,1\n"), target="z")


def test_boston_shape():
    ds = load_csv(BOSTON)
    assert (ds.n, ds.d) == (506, 13)


def test_split_sizes():
    assert split_sizes(10, (0.6, 0.2, 0.2)) == (6, 2, 2)
    assert split_sizes(506, (0.6, 0.2, 0.2)) == (304, 101, 101)
    with pytest.raises(ConfigError):
        split_sizes(10, (0.5, 0.5, 0.5))


def test_split_deterministic_and_disjoint():
    rng = np.random.default_rng(0)
    raw = synthetic_heteroscedastic(50, rng)
    a = split_and_standardize(raw, seed=3)
    b = split_and_standardize(raw, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.inputs, y.inputs)
    c = split_and_standardize(raw, seed=4)
    assert not np.array_equal(a[0].inputs, c[0].inputs)
    raw_x = np.concatenate([d.inputs * d.feature_stds + d.feature_means for d in a])[:, 0]
    np.testing.assert_allclose(np.sort(raw_x), np.sort(raw.inputs[:, 0]), atol=1e-12)


def test_standardization_uses_train_stats():
    raw = synthetic_heteroscedastic(200, np.random.default_rng(1))
    train, cal, test = split_and_standardize(raw, seed=0)
    assert abs(train.targets.mean()) <= 1e-10 and abs(train.targets.std() - 1) <= 1e-10
    assert abs(train.inputs.mean()) <= 1e-10
    assert cal.target_mean == train.target_mean and test.target_std == train.target_std


def test_apply_standardization_roundtrip():
    raw = synthetic_heteroscedastic(30, np.random.default_rng(2))
    train, _, _ = split_and_standardize(raw, seed=0)
    again = apply_standardization(standardization_dict(train), raw)
    assert again.n == raw.n
    np.testing.assert_allclose(again.targets * train.target_std + train.target_mean, raw.targets, atol=1e-12)
    with pytest.raises(DataError):
        apply_standardization(standardization_dict(train), Dataset(np.zeros((2, 2)), np.zeros(2)))


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(methods=("ours", "nn"))
    with pytest.raises(ConfigError):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(fractions=(0.6, 0.3, 0.2))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig())


def synthetic_gaussian(n=120, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, (n, 1))
    return Dataset(x, np.sin(2 * x[:, 0]) + 0.3 * rng.standard_normal(n))


def test_base_is_miscalibrated():
    cfg = ExperimentConfig(repetitions=1, methods=("base",), optimizer=FAST_OPT)
    table = run_experiment(cfg, synthetic_gaussian())
    assert table.values("base", "ece")[0] > 0


def test_repeatable_bytes(tmp_path):
    cfg = ExperimentConfig(repetitions=1, seed=5, methods=("ours", "rk", "rv", "rm", "base"),
                           optimizer=FAST_OPT, calibration=FAST_CAL)
    data = synthetic_gaussian(60)
    a = run_experiment(cfg, data)
    b = run_experiment(cfg, data)
    assert a.to_json() == b.to_json()
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    names = set(os.listdir(tmp_path / "a"))
    assert {"results.json", "reliability_ours.csv", "bands_rk.csv"} <= names
    doc = json.loads((tmp_path / "a" / "results.json").read_text())
    assert doc["repetitions"] == 1 and set(doc["summary"]) == set(cfg.methods)


def test_workers_match_serial():
    data = synthetic_gaussian(50)
    base = dict(repetitions=2, seed=1, methods=("rk", "rm"), optimizer=FAST_OPT)
    serial = run_experiment(ExperimentConfig(**base), data)
    parallel = run_experiment(ExperimentConfig(workers=2, **base), data)
    assert serial.to_json() == parallel.to_json()


def test_repetitions_differ():
    cfg = ExperimentConfig(repetitions=2, methods=("rk",), optimizer=FAST_OPT)
    t = run_experiment(cfg, synthetic_gaussian(50))
    v = t.values("rk", "avg_std")
    assert v[0] != v[1]
