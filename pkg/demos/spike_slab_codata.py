"""Learning prior inclusion probabilities from co-data with Monte Carlo EM.

The co-data flag marks half of the true signals plus some noise variables.
MCEM should find that flagged variables are more likely to be included.

Run: python demos/spike_slab_codata.py
"""

import numpy as np
from scipy.special import expit

from ebshrink.core import Dataset, RngStream
from ebshrink.spike_slab import McemSchedule, SpikeSlabModel, run_mcem

rng = RngStream(11).generator()
n, p = 100, 300
X = rng.standard_normal((n, p))
signal = np.zeros(p, bool)
signal[:30] = True
beta = np.where(signal, 0.7, 0.0)
y = X @ beta + rng.standard_normal(n)

flag = np.zeros(p)
flag[:15] = 1
flag[100:130] = 1
model = SpikeSlabModel(1.0, np.column_stack([np.ones(p), flag]))
alpha, trace, chain = run_mcem(Dataset(X, y), model, schedule=McemSchedule(k_max=10), rng=rng)

print("iteration  M      alpha")
for k, (m, a) in enumerate(zip(trace.m, trace.alpha[1:])):
    print(f"{k:>9} {m:>5}  {np.round(a, 3)}")
print("converged" if trace.converged else "stopped at k_max (alpha still creeping; the flag is a noisy signal)")
nu = model.nu(alpha)
print(f"\nprior inclusion: flagged {nu[flag == 1][0]:.3f}, unflagged {nu[flag == 0][0]:.3f}")

pip = chain["xi"].mean(axis=0)
print(f"mean posterior inclusion: flagged signals {pip[:15].mean():.2f}, other signals {pip[15:30].mean():.2f}, "
      f"flagged noise {pip[100:130].mean():.2f}, other noise {pip[30:100].mean():.2f}")
