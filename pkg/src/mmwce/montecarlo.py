"""Vectorised Monte Carlo engine: many independent estimation trials at once.

The engine mirrors :mod:`mmwce.estimators` (same beams, same effective
generator, same detector) but replaces explicit ``w^H H f`` products by
precomputed on-grid beam responses.  For a geometric channel
``H = N sum_l alpha_l u_r u_t^H`` the slot output is
``N sum_l alpha_l conj(u(phiR_l)^H w) (u(phiT_l)^H f)``, so the responses
``U^H f`` of every beam the algorithms can use are tabulated once per
partition of the search tree.

Channel draws happen before noise draws, so two algorithms run from the same
generator state see identical channels (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baselines import onehot_schedule
from .codebook import default_design_K3_M4, initial_partition, num_stages, refine_partition
from .detector import log_likelihoods_from_stats
from .estimators import feedback_bits, row_beams
from .grid import SteeringAngleGrid, complex_normal


class _Side:
    """Tabulated beams of one link end for every partition reachable at one stage."""

    def __init__(self, grid, partitions, B, K):
        Q, M, N = len(partitions), B.shape[0], grid.N
        UH = grid.response_matrix().conj().T
        self.resp = np.zeros((Q, M, N), dtype=complex)
        self.A = np.zeros((Q, M, K))
        self.resp1 = np.zeros((Q, K, N), dtype=complex)
        self.A1 = np.zeros((Q, K))
        self.C = np.ones(Q)
        self.sub = np.full((Q, N), -1, dtype=np.int64)
        self.sizes = np.zeros((Q, K), dtype=np.int64)
        self.start = np.zeros(Q, dtype=np.int64)
        self.reach = np.zeros(Q)
        for q, part in enumerate(partitions):
            if part is None:
                continue
            self.sizes[q] = part.sizes
            self.start[q] = part.active[0]
            self.reach[q] = (part.active[1] - part.active[0]) / N
            for k, (a, b) in enumerate(part.bounds):
                self.sub[q, a:b] = k
            if part.active[1] <= part.active[0]:
                continue
            beams, A = row_beams(grid, part, B)
            self.resp[q] = np.array([UH @ b.vector for b in beams])
            self.A[q] = A
            self.C[q] = math.exp(np.mean(np.log([b.C for b in beams])))
            for k in range(K):
                if part.sizes[k] == 0:
                    continue
                (b1,), A1 = row_beams(grid, part, np.eye(K)[k])
                self.resp1[q, k] = UH @ b1.vector
                self.A1[q, k] = A1[0, k]

    def inv_c2_mean(self) -> float:
        """Expected ``1 / C**2`` for a path uniform over the grid (partition weighted by size)."""
        w = self.reach
        return float(np.sum(w / self.C**2) / np.sum(w))


class BeamBook:
    """Beam tables for every stage of the ``K``-ary search tree for one design."""

    def __init__(self, N: int, K: int, B_T, B_R, convention: str = "paper-literal"):
        self.grid = SteeringAngleGrid(N, convention)
        self.N, self.K = N, K
        self.B_T = np.asarray(B_T, dtype=float)
        self.B_R = np.asarray(B_R, dtype=float)
        self.M = self.B_T.shape[0]
        self.S = num_stages(N, K)
        levels = [[initial_partition(N, K)]]
        for _ in range(self.S):
            nxt = []
            for part in levels[-1]:
                for k in range(1, K + 1):
                    ok = part is not None and part.sizes[k - 1] > 0
                    nxt.append(refine_partition(part, k, K) if ok else None)
            levels.append(nxt)
        self.tx = [_Side(self.grid, levels[s], self.B_T, K) for s in range(self.S)]
        self.rx = [_Side(self.grid, levels[s], self.B_R, K) for s in range(self.S)]
        self.leaf_start = np.array([p.active[0] if p is not None else -1 for p in levels[self.S]])

    @classmethod
    def for_algorithm(cls, algorithm, N, K, B_T=None, B_R=None, convention="paper-literal"):
        if algorithm == "baseline":
            B_T, B_R = onehot_schedule(K)
        elif B_T is None or B_R is None:
            B_T, B_R = default_design_K3_M4()
        return cls(N, K, B_T, B_R, convention)

    def energy_per_PT(self, slots_per_stage: int) -> float:
        """Expected total energy per unit ``P_T`` when every stage uses ``slots_per_stage`` slots."""
        return slots_per_stage * sum(t.inv_c2_mean() * r.inv_c2_mean() for t, r in zip(self.tx, self.rx))


@dataclass
class TrialBatch:
    """Per-trial outcomes of one simulated block."""

    errors: np.ndarray
    measurements: np.ndarray
    energy: np.ndarray
    feedback_bits: np.ndarray
    se_alpha: np.ndarray
    se_alpha_final: np.ndarray
    est_t: np.ndarray
    est_r: np.ndarray
    alpha_hat: np.ndarray
    stage_slots: np.ndarray


def draw_paths(rng, T, L, N, P_R=1.0, fading="rayleigh"):
    """Channel draws for ``T`` trials: gains ``(T, L)`` and AOD/AOA indices ``(T, L)``."""
    alpha = complex_normal(rng, (T, L), P_R)
    if fading == "awgn":
        alpha = math.sqrt(P_R) * np.exp(1j * np.angle(alpha))
    elif fading != "rayleigh":
        raise ValueError(f"unknown fading model {fading!r}")
    idx = rng.integers(0, N, size=(T, L, 2))
    return alpha, idx[..., 0], idx[..., 1]


def _posterior(gg, gy, yy, sigma2, N0, mask):
    """Posterior over hypotheses from per-trial sufficient statistics (rows are trials)."""
    if N0 > 0:
        ll = log_likelihoods_from_stats(gg, gy, sigma2, N0)
        ll = np.where(mask, ll, -np.inf)
        ll -= ll.max(axis=-1, keepdims=True)
        p = np.exp(ll)
        return p / p.sum(axis=-1, keepdims=True)
    # noiseless limit: uniform mass over the smallest projection residuals
    yy = yy[:, None]
    proj = np.divide(np.abs(gy) ** 2, gg, out=np.zeros(gg.shape), where=gg > 0)
    resid = np.where(mask, yy - proj, np.inf)
    win = resid <= resid.min(axis=-1, keepdims=True) + 1e-9 * np.maximum(yy, 1e-300)
    return win / win.sum(axis=-1, keepdims=True)


def _stage_response(side_t, side_r, qt, qr, rows_t, rows_r, alpha, it, ir, N, onehot=False):
    """Noiseless outputs ``(T, R)`` for beam rows ``rows_*`` (``(T, R)`` ints) of partitions ``q*``."""
    rt = side_t.resp1 if onehot else side_t.resp
    rr = side_r.resp1 if onehot else side_r.resp
    # (T, R, L) responses of each beam at each path angle
    ft = rt[qt[:, None, None], rows_t[:, :, None], it[:, None, :]]
    fr = rr[qr[:, None, None], rows_r[:, :, None], ir[:, None, :]]
    return N * np.sum(alpha[:, None, :] * np.conj(fr) * ft, axis=-1)


def simulate(book: BeamBook, algorithm: str, P_T: float, N0: float, T: int, rng, *,
             P_R=1.0, L=1, Gamma=1e-2, M_max=None, fading="rayleigh", paths=None, noise=None) -> TrialBatch:
    """Run ``T`` independent trials of ``algorithm`` ('fce', 'race' or 'baseline').

    ``paths`` (``(alpha, it, ir)``) and ``noise`` (unit-variance complex
    Gaussians of shape ``(T, L, S, slots)``) override the random draws;
    they exist for cross-checking against the scalar estimators.
    """
    N, K, S, M = book.N, book.K, book.S, book.M
    D = K * K
    if algorithm not in ("fce", "race", "baseline"):
        raise ValueError(f"simulate does not handle algorithm {algorithm!r}")
    M_max = M if (algorithm != "race" or M_max is None) else int(M_max)
    if M_max < M:
        raise ValueError(f"M_max={M_max} below M={M}")
    alpha, it, ir = draw_paths(rng, T, L, N, P_R, fading) if paths is None else paths
    alpha = np.asarray(alpha, dtype=complex).reshape(T, L)
    it = np.asarray(it).reshape(T, L)
    ir = np.asarray(ir).reshape(T, L)
    if noise is None:
        noise = complex_normal(rng, (T, L, S, M_max)) if N0 > 0 else np.zeros((T, L, S, M_max), complex)
    sqN0 = math.sqrt(N0)
    tr = np.arange(T)

    est_t = np.zeros((T, L), dtype=np.int64)
    est_r = np.zeros((T, L), dtype=np.int64)
    alpha_hat = np.zeros((T, L), dtype=complex)
    alpha_fin = np.zeros((T, L), dtype=complex)
    meas = np.zeros(T, dtype=np.int64)
    energy = np.zeros(T)
    fb = np.zeros(T, dtype=np.int64)
    stage_slots = np.zeros((T, L, S), dtype=np.int64)
    base_rows = np.broadcast_to(np.arange(M), (T, M))

    for ell in range(L):
        qt = np.zeros(T, dtype=np.int64)
        qr = np.zeros(T, dtype=np.int64)
        num = np.zeros(T, dtype=complex)
        den = np.zeros(T)
        for s in range(S):
            st, sr = book.tx[s], book.rx[s]
            Cs2 = st.C[qt] * sr.C[qr]
            P_s = P_T / Cs2**2
            scale = np.sqrt(P_s) * N * Cs2
            sigma2 = P_s * N**2 * Cs2**2 * P_R
            mask = ((st.sizes[qt] > 0)[:, :, None] & (sr.sizes[qr] > 0)[:, None, :]).reshape(T, D)

            G = (st.A[qt][:, :, :, None] * sr.A[qr][:, :, None, :]).reshape(T, M, D) / Cs2[:, None, None]
            h = _stage_response(st, sr, qt, qr, base_rows, base_rows, alpha, it, ir, N)
            y = np.sqrt(P_s)[:, None] * h + sqN0 * noise[:, ell, s, :M]
            rows = np.full(T, M)

            # expected contribution of previously estimated paths, on the hypothesis axis
            off = np.zeros((T, D), dtype=complex)
            for j in range(ell):
                kt = st.sub[qt, est_t[:, j]]
                kr = sr.sub[qr, est_r[:, j]]
                ok = (kt >= 0) & (kr >= 0)
                off[tr[ok], (kt * K + kr)[ok]] += scale[ok] * alpha_hat[ok, j]
            y = y - np.einsum("tmd,td->tm", G, off)
            # the generator is real, so g_d^H y needs no conjugation
            gg = np.sum(G**2, axis=1)
            gy = np.einsum("tmd,tm->td", G, y)
            yy = np.sum(np.abs(y) ** 2, axis=1)

            if algorithm == "baseline":
                g = st.A[qt].max(axis=-1) * sr.A[qr].max(axis=-1)
                score = np.divide(np.abs(y), g, out=np.full((T, M), -np.inf), where=g > 0)
                d_hat = np.argmax(np.where(mask, score, -np.inf), axis=-1)
            else:
                p = _posterior(gg, gy, yy, sigma2, N0, mask)
                d_hat = np.argmax(p, axis=-1)
                conf = p[tr, d_hat]
                if algorithm == "race":
                    active = (conf < 1.0 - Gamma) & (rows < M_max)
                    while active.any():
                        a = np.flatnonzero(active)
                        d = d_hat[a]
                        kt_h, kr_h = d // K, d % K
                        g = st.A1[qt[a], kt_h] * sr.A1[qr[a], kr_h] / Cs2[a]
                        h1 = _stage_response(st, sr, qt[a], qr[a], kt_h[:, None], kr_h[:, None],
                                             alpha[a], it[a], ir[a], N, onehot=True)[:, 0]
                        y1 = np.sqrt(P_s[a]) * h1 + sqN0 * noise[a, ell, s, rows[a]] - g * off[a, d]
                        gg[a, d] += g * g
                        gy[a, d] += g * y1
                        yy[a] += np.abs(y1) ** 2
                        rows[a] += 1
                        pa = _posterior(gg[a], gy[a], yy[a], sigma2[a], N0, mask[a])
                        d_hat[a] = np.argmax(pa, axis=-1)
                        conf[a] = pa[np.arange(len(a)), d_hat[a]]
                        active[a] = (conf[a] < 1.0 - Gamma) & (rows[a] < M_max)

            stage_num = scale * gy[tr, d_hat]
            stage_den = scale**2 * gg[tr, d_hat]
            num += stage_num
            den += stage_den
            if s == S - 1:
                alpha_fin[:, ell] = P_R * stage_num / (P_R * stage_den + N0)
            meas += rows
            energy += P_s * rows
            stage_slots[:, ell, s] = rows
            if algorithm == "race":
                fb += (rows - M + 1) * feedback_bits(K, "race")
            else:
                fb += feedback_bits(K, algorithm)
            qt = qt * K + d_hat // K
            qr = qr * K + d_hat % K
        est_t[:, ell] = book.leaf_start[qt]
        est_r[:, ell] = book.leaf_start[qr]
        alpha_hat[:, ell] = P_R * num / (P_R * den + N0)

    errors, se, se_fin = _score(alpha, it, ir, est_t, est_r, alpha_hat, alpha_fin, N)
    return TrialBatch(errors, meas, energy, fb, se, se_fin, est_t, est_r, alpha_hat, stage_slots)


def _score(alpha, it, ir, est_t, est_r, alpha_hat, alpha_fin, N):
    """Beam-misalignment flags and coefficient squared errors.

    A trial is an error unless the set of estimated (AOD, AOA) pairs equals
    the set of true pairs.  Each estimate's coefficient is compared with the
    true path at the same grid pair, or with the same-rank true path when
    there is none (for one path: always the true gain).
    """
    true_code = it * N + ir
    est_code = est_t * N + est_r
    errors = np.any(np.sort(true_code, axis=1) != np.sort(est_code, axis=1), axis=1)
    match = est_code[:, :, None] == true_code[:, None, :]
    has = match.any(axis=-1)
    ref_idx = np.where(has, match.argmax(axis=-1), np.arange(alpha.shape[1])[None, :])
    ref = np.take_along_axis(alpha, ref_idx, axis=1)
    if alpha.shape[1] == 1:
        ref = alpha
    se = np.mean(np.abs(ref - alpha_hat) ** 2, axis=1)
    se_fin = np.mean(np.abs(ref - alpha_fin) ** 2, axis=1)
    return errors, se, se_fin


def simulate_exhaustive(grid: SteeringAngleGrid, P: float, N0: float, T: int, rng, *,
                        P_R=1.0, L=1, fading="rayleigh", paths=None) -> TrialBatch:
    """Vectorised exhaustive ``N**2`` beam sweep with grid steering beams."""
    N = grid.N
    alpha, it, ir = draw_paths(rng, T, L, N, P_R, fading) if paths is None else paths
    noise = complex_normal(rng, (T, N, N)) if N0 > 0 else np.zeros((T, N, N), complex)
    U = grid.response_matrix()
    gram = U.conj().T @ U  # gram[i, l] = u_i^H u_l
    # y[t, i, j]: transmit beam u_i, receive beam u_j
    Y = math.sqrt(P) * N * np.einsum("tl,til,tjl->tij", alpha, np.conj(gram[:, it].transpose(1, 0, 2)),
                                     gram[:, ir].transpose(1, 0, 2))
    Y = Y + math.sqrt(N0) * noise
    flat = np.abs(Y).reshape(T, -1)
    order = np.argsort(-flat, axis=1, kind="stable")[:, :L]
    est_t, est_r = order // N, order % N
    peak = np.take_along_axis(Y.reshape(T, -1), order, axis=1)
    g = math.sqrt(P) * N
    alpha_hat = P_R * g * peak / (P_R * g * g + N0)
    errors, se, se_fin = _score(alpha, it, ir, est_t, est_r, alpha_hat, alpha_hat, N)
    ones = np.ones(T, dtype=np.int64)
    return TrialBatch(errors, ones * N * N, np.full(T, P * N * N), ones * math.ceil(math.log2(N)),
                      se, se_fin, est_t, est_r, alpha_hat, np.full((T, 1, 1), N * N))
