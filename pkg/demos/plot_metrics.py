"""
Calibration error and sharpness of every method
===============================================

Fit the regressor once, recalibrate it four ways, and score each model on a
held-out set: the squared-gap calibration error over 21 levels, the average
std of the predictive distribution, the NLL, and the width of the central
95% interval. A reliability diagram shows observed against nominal levels.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from calgp import CalibrationConfig, evaluate, fit_baseline, optimize_hyperparameters, fit_posterior, calibrate_all
from calgp.harness import standardize, synthetic_heteroscedastic

rng = np.random.default_rng(2)
train, cal, test = standardize(*(synthetic_heteroscedastic(n, rng) for n in (200, 100, 1000)))
theta, sigma0 = optimize_hyperparameters(train)
post = fit_posterior(train, theta, sigma0)

models = {"ours": calibrate_all(None, cal, post, CalibrationConfig(grid_cap=49))}
for kind in ("rk", "rv", "rm", "base"):
    models[kind] = fit_baseline(kind, cal, post)

reports = {k: evaluate(m, test.inputs, test.targets) for k, m in models.items()}
print(f"{'method':6s} {'ECE':>8s} {'avg std':>8s} {'NLL':>8s} {'CI95':>8s}")
for k, r in reports.items():
    print(f"{k:6s} {r.ece:8.4f} {r.avg_std:8.4f} {r.nll:8.4f} {r.ci95_width:8.4f}")

fig, ax = plt.subplots(figsize=(4.5, 4.5))
ax.plot([0, 1], [0, 1], "k:", lw=1)
for k, r in reports.items():
    p, ph = zip(*r.observed)
    ax.plot(p, ph, ".-", label=k)
ax.set_xlabel("nominal level")
ax.set_ylabel("observed level")
ax.legend()
fig.savefig("reliability.png", dpi=120)
print("wrote reliability.png")
