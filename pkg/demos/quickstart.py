"""Estimate one single-path channel with FCE, RACE and the non-overlapped baseline.

Run with ``python3 demos/quickstart.py``.
"""

import numpy as np

from mmwce import EstimatorConfig, PathParams, build_channel, run_multistage
from mmwce.estimators import with_algorithm


def main():
    rng = np.random.default_rng(1)
    base = EstimatorConfig(N=27, P_T=1e3, N0=1.0, M_max=18)
    truth = PathParams(alpha=0.8 - 0.5j, phiT_idx=17, phiR_idx=4)
    H = build_channel(base.grid, [truth])
    print(f"true path: tx index {truth.phiT_idx}, rx index {truth.phiR_idx}, alpha {truth.alpha:.3f}")
    for algorithm in ("fce", "race", "baseline"):
        res = run_multistage(H, with_algorithm(base, algorithm), rng)
        print(f"{algorithm:>8}: tx {res.phiT_idx:2d} rx {res.phiR_idx:2d}  alpha_hat {res.alpha_hat:.3f}  "
              f"slots {res.measurements:2d}  energy {res.energy:.3g}  stage decisions {res.decisions}")


if __name__ == "__main__":
    main()
