"""
A confidence interval for the change point
==========================================

The threshold estimate converges at rate n, and its limit is the smallest
minimizer of a two-sided compound Poisson process.  The interval is read
off simulated minimizers of that process.
"""

import numpy as np

from cpqr.core import ThresholdGrid
from cpqr.estimator import FitConfig, fit
from cpqr.harness import DGPSpec, generate
from cpqr.inference import CIConfig, confidence_interval, pools_from_fit

spec = DGPSpec.baseline(n=200, p=10, gamma=0.5)
data, _ = generate(spec, np.random.default_rng(3))
res = fit(data, FitConfig(ThresholdGrid.from_observations(data.q)))

# loss changes from moving one observation across the threshold
rho1, rho2 = pools_from_fit(data, res.step1.coef, res.step1.tau)
print("left pool mean %.3f, right pool mean %.3f" % (rho1.mean(), rho2.mean()))

ci = confidence_interval(data, res, CIConfig(level=0.95, B=1000, seed=0))
print("tau_hat = %.4f, 95%% interval [%.4f, %.4f]" % (ci.tau_hat, ci.lo, ci.hi))
print("jump rate (density of q at tau_hat): %.3f" % ci.rate)

# the draws are n * (tau_hat - tau0) on the scale of the limit process
import matplotlib.pyplot as plt

plt.hist(ci.draws, bins=60)
plt.xlabel("h")
plt.savefig("minimizers.png")
