"""Empirical Skorohod-map constant over several seeds.

The walks scale with L, so the estimate does not depend on the interval length.

    python scripts/lipschitz_estimate.py [n_seeds]
"""

import sys

import numpy as np

from queue_mfg.skorohod import estimate_lipschitz_constant

if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
    vals = np.array([estimate_lipschitz_constant(seed=s) for s in range(n)])
    for s, v in enumerate(vals):
        print(f"seed {s:3d}: {v:.4f}")
    print(f"min {vals.min():.4f}  median {np.median(vals):.4f}  max {vals.max():.4f}")
