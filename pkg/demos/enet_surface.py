"""Marginal likelihood over an elastic-net penalty grid.

A small version of the surface study; the full one (n = p = 100, 6 x 6 grid)
takes a couple of minutes per seed on one core.

Run: python demos/enet_surface.py
"""

import numpy as np

from ebshrink.bayes_enet import grid_scan_experiment

grid = np.array([0.5, 1.0, 2.0, 3.0, 4.0])
scan = grid_scan_experiment(dict(n=50, p=50, lambda1_grid=grid, lambda2_grid=grid, n_keep=1500,
                                 burn_in=500, seed=3, include_truth=True), threads=None)

print("log marginal likelihood (rows lambda1, columns lambda2); data drawn at (2, 2)")
print("        " + "".join(f"{v:9.1f}" for v in grid))
for i, l1 in enumerate(grid):
    print(f"{l1:6.1f}  " + "".join(f"{v:9.2f}" for v in scan.log_ml[i]))
i, j = np.unravel_index(np.argmax(scan.log_ml), scan.log_ml.shape)
print(f"(2, 2) gives {scan.log_ml[2, 2]:.2f}; the ridge of near-equal values runs from large lambda1 with"
      " small lambda2 to the reverse, so the two penalties trade off against each other")
print(f"maximum at lambda1 = {grid[i]}, lambda2 = {grid[j]}; largest MC s.e. {scan.mc_se.max():.3f}")
