"""
Fitting the regressor
=====================

The mean of every model in this package comes from one ordinary GP
regressor with an ARD squared-exponential kernel. This script fits it on a
noisy 1-D function and shows the posterior band and the marginal
likelihood surface over the lengthscale.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from calgp import Dataset, Hyperparameters, fit_posterior, log_marginal_likelihood, optimize_hyperparameters

rng = np.random.default_rng(0)
x = rng.uniform(-3, 3, (40, 1))
y = np.sin(2 * x[:, 0]) + 0.2 * rng.standard_normal(40)
data = Dataset(x, y)

# %%
# Hyperparameters are fit by maximizing the log marginal likelihood with a
# few random restarts. The noise level is optimized jointly.
theta, sigma0 = optimize_hyperparameters(data)
print(f"amplitude {theta.amplitude:.3f}, lengthscale {theta.lengthscales[0]:.3f}, noise {sigma0:.3f}")

post = fit_posterior(data, theta, sigma0)
grid = np.linspace(-4, 4, 300)[:, None]
mu, sd = post.mean(grid), post.std(grid)

# %%
# The likelihood as a function of the lengthscale, holding the rest fixed.
ells = np.geomspace(0.05, 5, 80)
lml = [log_marginal_likelihood(data, Hyperparameters.from_natural(theta.amplitude, [l]), sigma0) for l in ells]

fig, (a, b) = plt.subplots(1, 2, figsize=(10, 3.5))
a.fill_between(grid[:, 0], mu - 2 * sd, mu + 2 * sd, alpha=0.3, label="mean +/- 2 std")
a.plot(grid[:, 0], mu, label="posterior mean")
a.plot(x[:, 0], y, "k.", label="data")
a.legend(loc="lower left")
b.semilogx(ells, lml)
b.axvline(theta.lengthscales[0], color="k", ls=":")
b.set_xlabel("lengthscale")
b.set_ylabel("log marginal likelihood")
fig.tight_layout()
fig.savefig("gp_regression.png", dpi=120)
print("wrote gp_regression.png")
