"""Three ways to pick the ridge penalty on one high-dimensional data set.

Run: python demos/ridge_eb_vs_cv.py
"""

import numpy as np

from ebshrink.core import BlockCovariance, Dataset, GroupStructure, RngStream, sample_design
from ebshrink.ridge_eb import (
    cv_ridge,
    direct_mml_ridge,
    group_moment_eb,
    ridge_fit,
    tau2_bias_corrected,
)

rng = RngStream(7).generator()
n, p, tau2 = 100, 1000, 0.01
X = sample_design(n, BlockCovariance(p), rng)
beta = np.sqrt(tau2) * rng.standard_normal(p)
d = Dataset(X, X @ beta + rng.standard_normal(n))

mml = direct_mml_ridge(d)
mom = tau2_bias_corrected(d)
lam_cv, tau2_cv = cv_ridge(d, k=10, rng=rng)
print(f"true tau2                 {tau2:.5f}")
print(f"marginal likelihood       {mml.tau2:.5f}  (sigma2 {mml.sigma2:.3f})")
print(f"bias-corrected moments    {mom:.5f}")
print(f"10-fold CV, sigma2/lambda {tau2_cv:.5f}  (lambda {lam_cv:.3g})")

# With p >> n, every penalty well below the smallest nonzero eigenvalue of
# X X' gives nearly the same interpolating fit, so the CV error curve is flat
# there and its argmin often sits at the bottom of the grid. sigma2/lambda is
# then a poor variance estimate even though predictions are similar.
for name, lam in [("MML", mml.lam), ("moments", 1 / mom), ("CV", lam_cv)]:
    b = ridge_fit(d, lam).coef
    print(f"{name:>8}: coefficient error {np.sum((b - beta) ** 2):.4f}")

# two groups with different signal levels
g = GroupStructure.contiguous([500, 500])
beta2 = np.concatenate([rng.standard_normal(500) * 0.2, rng.standard_normal(500) * 0.05])
d2 = Dataset(X, X @ beta2 + rng.standard_normal(n))
print("\ngroup variances, truth [0.04, 0.0025]:", np.round(group_moment_eb(d2, g), 4))
