"""Gaussian process regression with sharp, calibrated predictive quantiles."""

__version__ = "0.1.0"

from .baselines import BaselineModel, fit_baseline, model_from_dict, model_from_json
from .bayesopt import BayesOptConfig, BayesOptTrace, acquisition, run_bayesopt, test_function
from .calibration import (
    CalibrationConfig,
    CalibrationLevel,
    CalibrationModel,
    beta_of,
    calibrate_all,
    calibrate_single,
    q_lin,
    q_lin_inverse,
    sharpness_loss,
    theorem_grid,
    z_scores,
)
from .exceptions import (
    CalGPError,
    CalibrationError,
    ConfigError,
    DataError,
    NumericalError,
    OptimizationError,
    QuantileClampWarning,
)
from .gp import (
    Dataset,
    Hyperparameters,
    OptimizerConfig,
    PosteriorState,
    check_monotonicity,
    fit_posterior,
    gram_matrix,
    kernel_eval,
    log_marginal_likelihood,
    optimize_hyperparameters,
    posterior_mean,
    posterior_std,
)
from .harness import ExperimentConfig, ResultTable, load_csv, run_experiment, split_and_standardize
from .metrics import MetricsReport, ece, evaluate, observed_confidence, sharpness

__all__ = [name for name in dir() if not name.startswith("_")]
