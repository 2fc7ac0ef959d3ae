"""
Repeated-split benchmark on Boston housing
==========================================

The harness splits the data 60/20/20 at random, standardizes with training
statistics, fits the regressor, recalibrates on the middle part and scores
the rest. Each repetition draws its own seeds from one root seed, so the
whole table is reproducible. Two repetitions keep this demo short; the CLI
equivalent is::

    calgp benchmark --dataset tests/data/boston.csv --reps 20 --out-dir results/
"""

import os

from calgp import CalibrationConfig, ExperimentConfig, run_experiment

here = os.path.dirname(os.path.abspath(__file__))
cfg = ExperimentConfig(
    dataset=os.path.join(here, "..", "tests", "data", "boston.csv"),
    repetitions=2,
    methods=("ours", "rk", "rm", "base"),
    calibration=CalibrationConfig(grid_cap=33),
)
table = run_experiment(cfg)
for method, stats in table.summary().items():
    print(method, {k: round(v["mean"], 4) for k, v in stats.items()})

# %%
# ``write`` produces results.json plus reliability and band CSVs for plots.
table.write("boston_results")
print(sorted(os.listdir("boston_results")))
