"""Reference algorithms: the non-overlapped ``K**2``-slot hierarchical search and an exhaustive sweep."""

from __future__ import annotations

import numpy as np

from .detector import posterior
from .grid import NoiseModel, SteeringAngleGrid, measure, steering_vector


def onehot_schedule(K: int) -> tuple[np.ndarray, np.ndarray]:
    """One-hot design rows visiting every ``(k_t, k_r)`` pair once, in ``d`` order."""
    I = np.eye(K)
    return np.repeat(I, K, axis=0), np.tile(I, (K, 1))


def _magnitude_choice(y, A_T, A_R, mask):
    # slot m measures combination d = m + 1; divide out the per-slot beam gains
    g = A_T.max(axis=1) * A_R.max(axis=1)
    score = np.divide(np.abs(y), g, out=np.full(len(y), -np.inf), where=g > 0)
    score = np.where(mask, score, -np.inf)
    return int(np.argmax(score)) + 1


def run_stage_nonoverlapped(H, state, config, rng):
    """Measure all ``K**2`` one-hot beam pairs and keep the strongest output.

    Outputs are compared after removing each slot's beam gain, which is a
    plain magnitude comparison whenever the gains are equal.  The ML
    posterior of the chosen pair is reported as the confidence.
    """
    noise = NoiseModel(config.N0, rng)
    for m in range(state.M):
        state.y_raw.append(measure(H, state.tx[m], state.rx[m], state.P_s, noise))
    K = state.part_r.K
    d = _magnitude_choice(state.y, state.A_T, state.A_R, state.mask)
    state.d_hat = d
    state.confidence = float(posterior(state.stack(config))[d - 1])
    k_t = -(-d // K)
    return k_t, d - K * (k_t - 1), state.confidence, state


def exhaustive_sweep(H, P: float, N0: float, rng, grid: SteeringAngleGrid | None = None):
    """Measure every (transmit, receive) grid beam pair and return the strongest.

    Returns ``((phiT_idx, phiR_idx), peak_magnitude)``.
    """
    H = np.asarray(H)
    grid = SteeringAngleGrid(H.shape[0]) if grid is None else grid
    noise = NoiseModel(N0, rng)
    beams = [steering_vector(grid, i) for i in range(grid.N)]
    Y = np.empty((grid.N, grid.N), dtype=complex)
    for i, f in enumerate(beams):
        for j, w in enumerate(beams):
            Y[i, j] = measure(H, f, w, P, noise)
    i, j = np.unravel_index(int(np.argmax(np.abs(Y))), Y.shape)
    return (int(i), int(j)), float(np.abs(Y[i, j]))
