"""
Calibrated quantiles on heteroscedastic data
============================================

The noise in ``y = sin(3x) + (0.1 + 0.4|x|) eps`` grows away from the
origin, so a single GP std is too wide in the middle and too narrow at the
edges. Calibration keeps the regressor's mean and, for each confidence
level, trains a separate set of kernel hyperparameters whose posterior std
shapes the quantile.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from calgp import calibrate_all, fit_baseline, fit_posterior, optimize_hyperparameters
from calgp.harness import standardize, synthetic_heteroscedastic

rng = np.random.default_rng(1)
train, cal, test = standardize(*(synthetic_heteroscedastic(n, rng) for n in (200, 99, 1000)))
theta, sigma0 = optimize_hyperparameters(train)
post = fit_posterior(train, theta, sigma0)

# %%
# One calibration level per ``j / (N_cal + 1)`` (the default grid holds up
# to 99 levels, so 99 calibration points keep every one). This takes a few seconds.
model = calibrate_all(None, cal, post)
rk = fit_baseline("rk", cal, post)
print(f"{len(model.levels)} levels, zero crossing {model.zero_crossing and round(model.zero_crossing[0], 4)}")

# %%
# On the calibration set the coverage of level j is exactly j points.
counts = model.in_sample_coverage()
assert np.array_equal(counts, np.arange(1, cal.n + 1))
print("in-sample coverage is exact at every level")

# %%
# Out of sample the 90% band should contain about 90% of the test points.
lo, hi = model.quantile(0.05, test.inputs), model.quantile(0.95, test.inputs)
print(f"test coverage of the 5%-95% band: {np.mean((test.targets >= lo) & (test.targets <= hi)):.3f}")

# %%
# Compare the band widths with plain rescaling of the regressor's std.
grid = np.linspace(test.inputs.min(), test.inputs.max(), 300)[:, None]
fig, ax = plt.subplots(figsize=(8, 4))
ax.plot(test.inputs[:, 0], test.targets, ".", ms=2, color="0.6")
for m, name, c in ((rk, "rescaled std", "C1"), (model, "calibrated", "C0")):
    ax.plot(grid[:, 0], m.quantile(0.05, grid), c, label=name)
    ax.plot(grid[:, 0], m.quantile(0.95, grid), c)
ax.plot(grid[:, 0], model.mean(grid), "k", lw=1)
ax.legend()
fig.savefig("calibrated_quantiles.png", dpi=120)
print("wrote calibrated_quantiles.png")
