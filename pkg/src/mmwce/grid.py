"""Angular grid, ULA steering vectors, sparse geometric channels and pilot measurements.

All angles handled here are *steering* angles living on a discrete grid of
``N`` points.  Two grid conventions are available:

``"paper-literal"``
    ``eps_i = pi * i / N``, fed into ``exp(j 2 pi eps n)``.  The resulting
    array-response matrix is a non-DFT Vandermonde matrix.
``"dft"``
    ``eps_i = i / N``; the response matrix is the unitary DFT matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CONVENTIONS = ("paper-literal", "dft")


@dataclass(frozen=True)
class SteeringAngleGrid:
    """Discrete set of ``N`` steering angles shared by transmitter and receiver."""

    N: int
    convention: str = "paper-literal"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"antenna count must be a positive integer, got {self.N!r}")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown grid convention {self.convention!r}; expected one of {CONVENTIONS}")

    @property
    def values(self) -> np.ndarray:
        i = np.arange(self.N)
        if self.convention == "paper-literal":
            return np.pi * i / self.N
        return i / self.N

    def angle(self, idx: int) -> float:
        check_index(self, idx)
        return float(self.values[idx])

    def response_matrix(self) -> np.ndarray:
        """``U = [u(eps_0), ..., u(eps_{N-1})]`` (columns are steering vectors)."""
        n = np.arange(self.N)[:, None]
        return np.exp(2j * np.pi * n * self.values[None, :]) / np.sqrt(self.N)


def check_index(grid: SteeringAngleGrid, idx) -> None:
    if not (0 <= int(idx) < grid.N) or int(idx) != idx:
        raise IndexError(f"grid index {idx!r} out of range for N={grid.N}")


def steering_vector(grid: SteeringAngleGrid, idx: int) -> np.ndarray:
    """Unit-norm array response ``u(eps_idx)``; entry ``n`` is ``exp(j 2 pi eps n) / sqrt(N)``."""
    check_index(grid, idx)
    n = np.arange(grid.N)
    return np.exp(2j * np.pi * grid.values[idx] * n) / np.sqrt(grid.N)


def physical_to_steering(theta, spacing: float = 0.5):
    """Map a physical angle ``theta`` (radians) to ``spacing * sin(theta)``.

    ``spacing`` is the element spacing in wavelengths (half-wavelength by
    default).  Provided for reference only; the estimators work directly on
    grid indices.
    """
    return spacing * np.sin(theta)


@dataclass(frozen=True)
class PathParams:
    """One propagation path: complex gain plus AOD/AOA grid indices."""

    alpha: complex
    phiT_idx: int
    phiR_idx: int


def build_channel(grid: SteeringAngleGrid, paths: Sequence[PathParams]) -> np.ndarray:
    """``H = N * sum_l alpha_l u(phiR_l) u(phiT_l)^H`` for a symmetric ``N x N`` array pair."""
    if len(paths) == 0:
        raise ValueError("build_channel needs at least one path")
    H = np.zeros((grid.N, grid.N), dtype=complex)
    for p in paths:
        ur = steering_vector(grid, p.phiR_idx)
        ut = steering_vector(grid, p.phiT_idx)
        H += p.alpha * np.outer(ur, ut.conj())
    return np.sqrt(grid.N * grid.N) * H


def complex_normal(rng: np.random.Generator, size=None, variance: float = 1.0):
    """Circularly symmetric ``CN(0, variance)`` samples (a Python complex when ``size`` is None)."""
    shape = () if size is None else tuple(np.atleast_1d(size))
    z = rng.standard_normal(shape + (2,))
    out = (z[..., 0] + 1j * z[..., 1]) * np.sqrt(variance / 2.0)
    return complex(out) if size is None else out


def sample_paths(grid: SteeringAngleGrid, L: int, P_R: float, rng: np.random.Generator) -> list[PathParams]:
    """Draw ``L`` paths with ``alpha ~ CN(0, P_R)`` and uniform grid indices."""
    if L < 1:
        raise ValueError(f"path count must be >= 1, got {L}")
    if not P_R > 0:
        raise ValueError(f"gain variance must be positive, got {P_R}")
    alphas = complex_normal(rng, L, P_R)
    idx = rng.integers(0, grid.N, size=(L, 2))
    return [PathParams(complex(a), int(t), int(r)) for a, (t, r) in zip(alphas, idx)]


@dataclass
class NoiseModel:
    """Complex AWGN of power ``N0`` per measurement, drawn from ``rng``."""

    N0: float
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def __post_init__(self):
        if self.N0 < 0:
            raise ValueError(f"N0 must be non-negative, got {self.N0}")

    def sample(self) -> complex:
        if self.N0 == 0:
            return 0j
        return complex_normal(self.rng, variance=self.N0)


def _check_unit(v, name):
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > 1e-9:
        raise ValueError(f"beamforming vector {name} must have unit norm, got {nrm:.12g}")


def measure(H: np.ndarray, f, w, P: float, noise: NoiseModel) -> complex:
    """One pilot slot: ``sqrt(P) w^H H f x + n`` with ``x = 1`` and ``n ~ CN(0, N0)``.

    ``f`` and ``w`` may be plain vectors or :class:`mmwce.codebook.Beamformer`
    instances.
    """
    f = getattr(f, "vector", f)
    w = getattr(w, "vector", w)
    _check_unit(f, "f")
    _check_unit(w, "w")
    if P < 0:
        raise ValueError(f"transmit power must be non-negative, got {P}")
    return complex(np.sqrt(P) * (np.conj(w) @ H @ f)) + noise.sample()
