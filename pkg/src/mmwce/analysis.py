"""Closed-form error-probability and minimum-energy predictions.

Fading-averaged quantities (pairwise error, single-stage PEE surrogates)
integrate the Rayleigh gain analytically.  The minimum-energy bound is
conditional on a fixed gain magnitude ``|alpha|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codebook import column_distances, min_column_distance


@dataclass(frozen=True)
class LinkBudget:
    """Link parameters entering the analytical predictions.

    ``E_min`` (squared minimum generator column distance) is only needed by
    the lower bound and is derived from ``G`` when left as ``None``.
    """

    P_s: float
    C_s: float
    N: int
    P_R: float = 1.0
    N0: float = 1.0
    E_min: float | None = None
    M: int = 4
    R: float = 0.0
    K: int = 3
    p_FB: float = 1.0
    alpha_abs: float = 1.0

    def __post_init__(self):
        for name in ("P_s", "C_s", "P_R", "N0", "R", "alpha_abs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.E_min is not None and self.E_min < 0:
            raise ValueError(f"E_min must be non-negative, got {self.E_min}")
        if not 0 <= self.p_FB <= 1:
            raise ValueError(f"p_FB must lie in [0, 1], got {self.p_FB}")

    @property
    def signal(self) -> float:
        """``P_s C_s**4 N**2 P_R``: mean received energy per unit squared generator gain."""
        return self.P_s * self.C_s**4 * self.N**2 * self.P_R


def pairwise_error_prob(gamma_bar):
    """``0.5 (1 - sqrt(g**2 / (g**2 + 2)))``; works elementwise on arrays."""
    g = np.asarray(gamma_bar, dtype=float)
    if np.any(g < 0):
        raise ValueError("gamma_bar must be non-negative")
    with np.errstate(invalid="ignore"):
        p = 0.5 * (1.0 - np.sqrt(np.where(np.isinf(g), 1.0, g * g / (g * g + 2.0))))
    return float(p) if p.ndim == 0 else p


def _snr_factor(budget: LinkBudget) -> float:
    if budget.N0 == 0:
        return math.inf
    return math.sqrt(budget.signal / (2.0 * budget.N0))


def gamma_bar(budget: LinkBudget, G, v: int, v_prime: int) -> float:
    """Effective SNR separating hypotheses ``v`` and ``v_prime`` (1-based columns of ``G``)."""
    if v == v_prime:
        raise ValueError("gamma_bar needs two distinct hypotheses")
    G = np.asarray(G, dtype=float)
    dist = float(np.linalg.norm(G[:, v - 1] - G[:, v_prime - 1]))
    f = _snr_factor(budget)
    return f * dist if dist > 0 else 0.0


def _pair_terms(budget, D):
    f = _snr_factor(budget)
    if math.isinf(f):
        return np.where(D > 0, 0.0, 0.5)
    return pairwise_error_prob(f * D)


def pee_single_stage(budget: LinkBudget, G, mode: str = "approx") -> float:
    """Single-stage PEE surrogate with a uniform prior over the ``K**2`` hypotheses.

    ``upper`` sums the pairwise terms over all ordered pairs, ``approx``
    keeps only each column's minimum-distance neighbours, and ``lower`` is
    the single nearest-neighbour term at the global minimum distance.  For
    designs in which every column attains the global minimum distance the
    three satisfy ``lower <= approx <= upper``.
    """
    G = np.asarray(G, dtype=float)
    D = column_distances(G)
    n = D.shape[0]
    if np.any(np.linalg.norm(G, axis=0) == 0):
        raise ValueError("generator has an all-zero column")
    if mode == "upper":
        T = _pair_terms(budget, D)
        np.fill_diagonal(T, 0.0)
        return float(T.sum() / n)
    if mode == "approx":
        _, neigh = min_column_distance(G)
        T = _pair_terms(budget, D)
        return float(sum(T[i, j - 1] for i, nb in enumerate(neigh) for j in nb) / n)
    if mode == "lower":
        E_min = budget.E_min if budget.E_min is not None else min_column_distance(G)[0] ** 2
        if budget.N0 == 0:
            return 0.0 if E_min > 0 else 0.5
        x = budget.signal * E_min
        return 0.5 * (1.0 - math.sqrt(x / (x + 4.0 * budget.N0)))
    raise ValueError(f"unknown mode {mode!r}; expected 'upper', 'approx' or 'lower'")


def pee_multistage(per_stage) -> tuple[float, float]:
    """Combine per-stage error probabilities: ``(1 - prod(1 - p), sum(p))``."""
    p = np.asarray(per_stage, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("per-stage probabilities must lie in [0, 1]")
    return float(1.0 - np.prod(1.0 - p)), float(p.sum())


def min_energy_bound(budget: LinkBudget) -> float:
    """Minimum stage energy-to-noise ratio ``E_s / N0`` for ``M + R`` slots.

    Treats the stage as sending ``K**2`` bits over ``M + R`` channel uses at
    the Shannon-Hartley limit; extra slots add received energy with
    probability ``p_FB``.
    """
    n = budget.M + budget.R
    if n < 1:
        raise ValueError("need at least one measurement slot")
    K2 = budget.K**2
    den = budget.C_s**4 * budget.N**2 * budget.alpha_abs**2 * (budget.M / K2 + budget.R * budget.p_FB)
    if den <= 0:
        raise ValueError("bound undefined: no received energy")
    return n**2 * (2.0 ** (K2 / n) - 1.0) / den


def snr_shannon_threshold(K: int, n_slots: float) -> float:
    """Smallest received SNR supporting ``K**2`` bits in ``n_slots`` uses."""
    return 2.0 ** (K**2 / n_slots) - 1.0
