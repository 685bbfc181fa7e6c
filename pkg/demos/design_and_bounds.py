"""Inspect the built-in overlapped design, search for new ones and evaluate the error bounds.

Run with ``python3 demos/design_and_bounds.py``.
"""

import numpy as np

from mmwce import LinkBudget, default_design_K3_M4, generator, min_column_distance, pee_single_stage
from mmwce import search_optimal_design
from mmwce.codebook import DesignSearchError


def main():
    B_T, B_R = default_design_K3_M4()
    G = generator(B_T, B_R)
    d_min, _ = min_column_distance(G)
    print("built-in generator (4 x 9):")
    print(np.array2string(G, precision=3, suppress_small=True))
    print(f"minimum column distance {d_min:.4f}\n")

    for M in (3, 4, 5, 6):
        try:
            _, _, d = search_optimal_design(M, 3, 3, 2, 2)
            print(f"searched design, M={M}: d_min {d:.4f}")
        except DesignSearchError as exc:
            print(f"searched design, M={M}: none admissible ({exc})")

    print("\nsingle-stage error probability, N=3, C_s=1:")
    for db in (20, 30, 40):
        budget = LinkBudget(P_s=10 ** (db / 10), C_s=1.0, N=3, M=4, K=3)
        lo, ap, up = (pee_single_stage(budget, G, mode) for mode in ("lower", "approx", "upper"))
        print(f"  P_s {db} dB: lower {lo:.3g}  approx {ap:.3g}  upper {up:.3g}")


if __name__ == "__main__":
    main()
