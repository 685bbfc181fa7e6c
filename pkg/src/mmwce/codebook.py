"""Beam-pattern design matrices, generator matrices and beamformer synthesis.

Sub-range and hypothesis indices in the public API are 1-based (``k = 1..K``,
``d = 1..K**2``) so that they read the same way as the usual
``d = K (k_t - 1) + k_r`` bookkeeping.  Grid indices are 0-based.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .grid import SteeringAngleGrid


class DesignViolationError(ValueError):
    """Raised when a set of beamformers does not share a common gain constant."""


class DesignSearchError(RuntimeError):
    """Raised when the design search cannot run or finds no admissible design."""


class ConditioningError(np.linalg.LinAlgError):
    """Raised when the array response matrix is too ill-conditioned to invert."""


COND_LIMIT = 1e10


def default_design_K3_M4() -> tuple[np.ndarray, np.ndarray]:
    """The symmetric ``K=3``, ``M=4`` overlapped design with row weight 2.

    Returns ``(B_T, B_R)``.  Transmit rows follow ``(b1, b1, b2, b2)`` and
    receive rows ``(b1, b2, b1, b2)`` so that all four beam combinations are
    visited once.
    """
    hi, lo = np.sqrt(2.0) / np.sqrt(3.0), 1.0 / np.sqrt(3.0)
    b1 = np.array([hi, lo, 0.0])
    b2 = np.array([0.0, lo, hi])
    B_T = np.vstack([b1, b1, b2, b2])
    B_R = np.vstack([b1, b2, b1, b2])
    return B_T, B_R


def generator(B_T, B_R) -> np.ndarray:
    """Row-wise Kronecker product ``G[m] = B_T[m] kron B_R[m]``.

    Column ``d`` (1-based) corresponds to ``d = K_R (k_t - 1) + k_r``.
    """
    B_T = np.asarray(B_T, dtype=float)
    B_R = np.asarray(B_R, dtype=float)
    if B_T.ndim != 2 or B_R.ndim != 2 or B_T.shape[0] != B_R.shape[0]:
        raise ValueError(f"design matrices need equal row counts, got {B_T.shape} and {B_R.shape}")
    M = B_T.shape[0]
    return (B_T[:, :, None] * B_R[:, None, :]).reshape(M, -1)


def column_distances(G) -> np.ndarray:
    """Matrix of Euclidean distances between the columns of ``G``."""
    G = np.asarray(G)
    diff = G[:, :, None] - G[:, None, :]
    return np.sqrt(np.sum(np.abs(diff) ** 2, axis=0))


def min_column_distance(G, rtol: float = 1e-9) -> tuple[float, list[set[int]]]:
    """Minimum distance between distinct columns, plus each column's nearest neighbours.

    Neighbour sets hold 1-based column indices attaining that column's own
    minimum distance (within ``rtol``).
    """
    D = column_distances(G)
    n = D.shape[0]
    if n < 2:
        raise ValueError("need at least two columns")
    np.fill_diagonal(D, np.inf)
    per_col = D.min(axis=1)
    neighbours = []
    for j in range(n):
        tol = rtol * max(per_col[j], 1.0)
        neighbours.append({int(i) + 1 for i in np.flatnonzero(D[j] <= per_col[j] + tol)})
    return float(per_col.min()), neighbours


# -- sub-range partitions ---------------------------------------------------


@dataclass(frozen=True)
class SubRangePartition:
    """``K`` contiguous grid-index intervals ``[start, stop)`` covering the active range."""

    bounds: tuple[tuple[int, int], ...]
    stage: int = 1

    @property
    def K(self) -> int:
        return len(self.bounds)

    @property
    def active(self) -> tuple[int, int]:
        return self.bounds[0][0], self.bounds[-1][1]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in self.bounds)

    def indices(self, k: int) -> np.ndarray:
        a, b = self.bounds[k - 1]
        return np.arange(a, b)

    def subrange_of(self, idx: int) -> int | None:
        """1-based sub-range holding grid index ``idx``, or None outside the active range."""
        for k, (a, b) in enumerate(self.bounds, start=1):
            if a <= idx < b:
                return k
        return None


def _split(start: int, stop: int, K: int) -> tuple[tuple[int, int], ...]:
    n = stop - start
    base, extra = divmod(n, K)
    out, a = [], start
    for k in range(K):
        size = base + (1 if k < extra else 0)
        out.append((a, a + size))
        a += size
    return tuple(out)


def initial_partition(N: int, K: int) -> SubRangePartition:
    return SubRangePartition(_split(0, N, K), stage=1)


def refine_partition(partition: SubRangePartition, k: int, K: int | None = None) -> SubRangePartition:
    """Zoom into sub-range ``k`` (1-based) and split it into ``K`` near-equal parts.

    When the size is not divisible by ``K`` the leading parts get one extra
    grid point (ceil split).
    """
    K = partition.K if K is None else K
    if not 1 <= k <= partition.K:
        raise ValueError(f"sub-range index {k} outside 1..{partition.K}")
    a, b = partition.bounds[k - 1]
    if b <= a:
        raise RuntimeError(f"cannot refine empty sub-range {k} of {partition.bounds}")
    return SubRangePartition(_split(a, b, K), stage=partition.stage + 1)


def num_stages(N: int, K: int) -> int:
    """``S = ceil(log_K N)`` computed in integers."""
    S, span = 0, 1
    while span < N:
        span *= K
        S += 1
    return S


# -- beamformer synthesis ---------------------------------------------------


@lru_cache(maxsize=32)
def _inverse_response_h(grid: SteeringAngleGrid) -> np.ndarray:
    U = grid.response_matrix()
    cond = np.linalg.cond(U)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ConditioningError(
            f"array response matrix for N={grid.N} ({grid.convention}) has condition number {cond:.3g}"
        )
    # pinv(U^H) == (U U^H)^{-1} U for square invertible U
    return np.linalg.inv(U.conj().T)


@dataclass(frozen=True)
class Beamformer:
    """Unit-norm beamforming vector with its gain constant ``C``."""

    vector: np.ndarray
    C: float

    def response(self, grid: SteeringAngleGrid) -> np.ndarray:
        """On-grid response ``U^H f``."""
        return grid.response_matrix().conj().T @ self.vector


def target_response(grid: SteeringAngleGrid, partition: SubRangePartition, amplitudes) -> np.ndarray:
    """Desired on-grid pattern with unit gain constant: ``b_k`` inside sub-range ``k``, 0 elsewhere."""
    amplitudes = np.asarray(amplitudes, dtype=float)
    if amplitudes.shape != (partition.K,):
        raise ValueError(f"expected {partition.K} amplitudes, got shape {amplitudes.shape}")
    z = np.zeros(grid.N)
    for k, (a, b) in enumerate(partition.bounds):
        z[a:b] = amplitudes[k]
    return z


def synthesize_beamformer(grid: SteeringAngleGrid, partition: SubRangePartition, amplitudes) -> Beamformer:
    """Least-squares beam whose on-grid response is proportional to the target pattern.

    Solves ``f~ = pinv(U^H) z`` for the unit-gain target ``z`` and normalises;
    the achieved response is then ``U^H f = C z`` with ``C = 1 / ||f~||``.
    """
    z = target_response(grid, partition, amplitudes)
    if not np.any(z):
        raise ValueError("target pattern illuminates no grid angle")
    f = _inverse_response_h(grid) @ z
    nrm = np.linalg.norm(f)
    f = f / nrm
    C = 1.0 / nrm
    achieved = grid.response_matrix().conj().T @ f
    err = np.max(np.abs(achieved - C * z))
    if err > 1e-6 * max(C, 1e-300):
        raise ConditioningError(f"synthesised response deviates from target by {err:.3g} (C={C:.3g})")
    return Beamformer(f, float(C))


def stage_gain_constant(beamformers, check: bool = True) -> float:
    """Common gain constant of a set of beamformers.

    With ``check`` on, a relative spread above 1e-6 triggers a warning and
    the geometric mean is returned; above 1e-2 a :class:`DesignViolationError`
    is raised.  With ``check`` off the geometric mean is returned silently.
    """
    Cs = np.array([b.C for b in beamformers], dtype=float)
    if Cs.size == 0:
        raise ValueError("no beamformers given")
    gmean = float(np.exp(np.mean(np.log(Cs))))
    if not check:
        return gmean
    spread = (Cs.max() - Cs.min()) / Cs.max()
    if spread <= 1e-6:
        return float(Cs.mean())
    if spread > 1e-2:
        raise DesignViolationError(f"gain constants differ by {spread:.3g} (relative); rows are not balanced")
    warnings.warn(f"gain constants differ by {spread:.3g}; using geometric mean", RuntimeWarning, stacklevel=2)
    return gmean


# -- optimal design search --------------------------------------------------


def normalize_design(Bb) -> np.ndarray:
    """Single pass: scale columns to unit norm, then rows to unit norm (zero lines stay zero)."""
    B = np.asarray(Bb, dtype=float)
    cn = np.linalg.norm(B, axis=-2, keepdims=True)
    B = np.divide(B, cn, out=np.zeros_like(B), where=cn > 0)
    rn = np.linalg.norm(B, axis=-1, keepdims=True)
    return np.divide(B, rn, out=np.zeros_like(B), where=rn > 0)


def _binarized_designs(M: int, K: int, W: int) -> np.ndarray:
    rows = sorted(
        tuple(1 if k in ones else 0 for k in range(K)) for ones in itertools.combinations(range(K), W)
    )
    # product over lexicographically sorted rows yields matrices in lexicographic order
    return np.array(list(itertools.product(rows, repeat=M)), dtype=float).reshape(-1, M, K)


def _pair_min_distances(BT, BR, zero_tol=1e-12):
    G = (BT[:, None, :, :, None] * BR[None, :, :, None, :]).reshape(BT.shape[0], BR.shape[0], BT.shape[1], -1)
    gram = np.einsum("abmi,abmj->abij", G, G)
    sq = np.einsum("abii->abi", gram)
    D2 = sq[..., :, None] + sq[..., None, :] - 2.0 * gram
    n = D2.shape[-1]
    D2[..., np.arange(n), np.arange(n)] = np.inf
    dmin = np.sqrt(np.clip(D2.min(axis=(-1, -2)), 0.0, None))
    dead = (sq <= zero_tol).any(axis=-1)
    dmin[dead] = -np.inf
    return dmin


def search_optimal_design(M: int, K_T: int, K_R: int, W_T: int, W_R: int, cap: int = 10**7, chunk: int = 64):
    """Exhaustive max-min-distance search over row-weight-constrained binary designs.

    Every ``M x K`` 0/1 matrix with exactly ``W`` ones per row is normalised
    (columns, then rows) and every transmit/receive pair is scored by the
    minimum column distance of its generator.  Pairs whose generator has a
    zero column, or two coincident columns, are rejected.  Ties go to the
    lexicographically smallest binarisation ``(B_T, B_R)``.

    Returns ``(B_T, B_R, d_min)``.
    """
    if not (1 <= W_T <= K_T and 1 <= W_R <= K_R):
        raise ValueError(f"row weights must satisfy 1 <= W <= K, got W_T={W_T}, K_T={K_T}, W_R={W_R}, K_R={K_R}")
    if M < 1:
        raise ValueError(f"M must be positive, got {M}")
    total = math.comb(K_T, W_T) ** M * math.comb(K_R, W_R) ** M
    if total > cap:
        raise DesignSearchError(
            f"search space has {total} candidate pairs, above the cap of {cap}; reduce M, K or W"
        )
    BTb = _binarized_designs(M, K_T, W_T)
    BRb = _binarized_designs(M, K_R, W_R)
    BT = normalize_design(BTb)
    BR = normalize_design(BRb)
    scores = np.concatenate([_pair_min_distances(BT[i : i + chunk], BR) for i in range(0, len(BT), chunk)])
    best = scores.max()
    if not best > 1e-12:
        raise DesignSearchError(
            f"no admissible design for M={M}, K=({K_T},{K_R}), W=({W_T},{W_R}): "
            "every candidate leaves two sub-range combinations indistinguishable"
        )
    flat = int(np.flatnonzero(scores.ravel() >= best - 1e-12)[0])
    i, j = divmod(flat, len(BR))
    return BT[i], BR[j], float(scores[i, j])


# -- plain-text design files ------------------------------------------------


def save_design(path, B_T, B_R, **meta) -> Path:
    """Write ``B_T`` and ``B_R`` as whitespace-separated rows under ``#`` headers."""
    path = Path(path)
    B_T = np.asarray(B_T, dtype=float)
    B_R = np.asarray(B_R, dtype=float)
    header = {"M": B_T.shape[0], "K_T": B_T.shape[1], "K_R": B_R.shape[1], **meta}
    lines = ["# " + " ".join(f"{k}={v}" for k, v in header.items())]
    for tag, B in (("B_T", B_T), ("B_R", B_R)):
        lines.append(f"# {tag}")
        lines.extend(" ".join(f"{x:.17g}" for x in row) for row in B)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write design file {path}: {exc}") from exc
    return path


def load_design(path):
    """Inverse of :func:`save_design`; returns ``(B_T, B_R, meta)`` with meta values as strings."""
    meta, blocks, current = {}, {}, None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body in ("B_T", "B_R"):
                current = blocks.setdefault(body, [])
            else:
                meta.update(item.split("=", 1) for item in body.split() if "=" in item)
            continue
        if current is None:
            raise ValueError(f"{path}: matrix row before a B_T/B_R header")
        current.append([float(x) for x in line.split()])
    if set(blocks) != {"B_T", "B_R"}:
        raise ValueError(f"{path}: expected B_T and B_R blocks, found {sorted(blocks)}")
    return np.array(blocks["B_T"]), np.array(blocks["B_R"]), meta
