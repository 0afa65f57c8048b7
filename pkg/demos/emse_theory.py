"""Exact error of the moment estimator of tau2, and what happens once p passes n.

Run: python demos/emse_theory.py
"""

import numpy as np

from ebshrink.core import BlockCovariance
from ebshrink.ridge_eb import emse_closed_form, emse_independent
from ebshrink.sim_harness import run_emse_sweep

n, tau2 = 100, 0.01

print("closed-form root EMSE of the OLS estimator, n = 100, tau2 = 0.01")
print("   p   independent   block rho=0.3   block rho=0.8")
for p in (10, 30, 50, 70, 90, 96):
    ind = np.sqrt(emse_independent(n, p, tau2))
    r3 = np.sqrt(emse_closed_form(n, p, tau2, BlockCovariance(p, 2, 0.3).precision()))
    r8 = np.sqrt(emse_closed_form(n, p, tau2, BlockCovariance(p, 2, 0.8).precision()))
    print(f"{p:4d} {ind:13.4f} {r3:15.4f} {r8:15.4f}")

# OLS breaks down as p approaches n. The bias-corrected estimator on a
# lightly penalized ridge fit keeps working for p > n, with its worst
# error around p = n.
print("\nsimulated root EMSE (100 replicates per p)")
rows = run_emse_sweep(dict(n=n, p=[25, 50, 100, 200, 500, 1000], tau2=tau2, replicates=100, seed=1,
                           closed_form=False), threads=None)
print("   p     naive   bias-corrected")
for p in (25, 50, 100, 200, 500, 1000):
    r = {row["method"]: row["root_emse"] for row in rows if row["p"] == p}
    print(f"{p:5d} {r['naive']:9.4f} {r['bias_corrected']:16.4f}")
