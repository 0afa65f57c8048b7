"""Coverage of 95% intervals for predicted probabilities in group-ridge logistic models.

Compares empirical-Bayes (fixed penalties), full Bayes (Gamma priors on the
group precisions) and a hybrid (one random global scale, EB multipliers).
Two replicates keep this to about half a minute.

Run: python demos/interval_coverage.py
"""

import warnings

import numpy as np

from ebshrink.interval_models import CoverageConfig, coverage_experiment

with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    rows, info = coverage_experiment(CoverageConfig(n_rep=2, seed=5), threads=None)
print(f"tau0 = {info['tau0']:.3f}; EB penalties per replicate:",
      [(round(x["lambda"], 2), np.round(x["multipliers"], 2).tolist()) for x in info["penalties"]])

print("\nvariant  kind         all    extreme q   mid q   mean width")
for v in ("EB", "FB", "Hybrid"):
    for k in ("equal-tail", "hpd"):
        sub = [r for r in rows if r["variant"] == v and r["kind"] == k]
        q = np.array([r["q_true"] for r in sub])
        c = np.array([r["covered"] for r in sub])
        w = np.array([r["upper"] - r["lower"] for r in sub])
        ext = (q < 0.1) | (q > 0.9)
        mid = (q >= 0.2) & (q <= 0.8)
        print(f"{v:7s}  {k:10s} {c.mean():6.3f} {c[ext].mean():10.3f} {c[mid].mean():8.3f} {w.mean():10.3f}")
