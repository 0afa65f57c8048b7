"""Shrinking 18 early-season batting averages toward a common mean.

Run: python demos/batting.py
"""

import numpy as np

from ebshrink.core import RngStream
from ebshrink.normal_means import (
    BATTING_FIRST45,
    BATTING_TRUTH,
    batting_data,
    extend_batting,
    fit_gaussian_prior,
    fit_mixture_prior_em,
    posterior_mean_gaussian,
    posterior_mean_mixture,
)

c18 = batting_data()
prior = fit_gaussian_prior(c18)
theta = posterior_mean_gaussian(c18, prior)
print(f"Gaussian prior from 18 players: mu = {prior.mu:.4f}, tau2 = {prior.tau2:.6f}")
print(f"variance of the season-end truths: {np.var(BATTING_TRUTH, ddof=1):.5f}")

# The moment estimate of tau2 is well below the spread of the truths, so the
# estimates are pulled too hard toward mu. Borrow strength from many more
# synthetic players drawn around a kernel density of the truths.
rng = RngStream(0).generator()
ext, truths = extend_batting(BATTING_TRUTH, 10_000, rng)
prior_ext = fit_gaussian_prior(ext)
theta_ext = posterior_mean_gaussian(ext, prior_ext)[:18]
print(f"extended data: tau2 = {prior_ext.tau2:.5f} (truth variance {np.var(truths, ddof=1):.5f})")

mix = fit_mixture_prior_em(ext, 3, rng=rng, restarts=3)
theta_mix = posterior_mean_mixture(ext, mix)[:18]
print("three-component prior weights:", np.round(mix.weights, 3))

print("\nplayer   first45   18-only   extended   mixture   truth")
for i in range(18):
    print(f"{i + 1:>6} {BATTING_FIRST45[i]:9.3f} {theta[i]:9.3f} {theta_ext[i]:10.3f} "
          f"{theta_mix[i]:9.3f} {BATTING_TRUTH[i]:7.3f}")

for name, est in [("raw", BATTING_FIRST45), ("18-only", theta), ("extended", theta_ext), ("mixture", theta_mix)]:
    print(f"{name:>9} total squared error: {np.sum((est - BATTING_TRUTH) ** 2):.5f}")
