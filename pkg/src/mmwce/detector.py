"""Maximum-likelihood detection of the active sub-range combination.

Under a single path with Rayleigh gain the stage measurements are zero-mean
complex Gaussian with covariance ``sigma2 g_d g_d^H + N0 I`` for hypothesis
``d``, where ``g_d`` is column ``d`` of the generator and
``sigma2 = P N**2 C**4 P_R``.  The rank-one structure gives closed forms for
the determinant and inverse, so every likelihood costs ``O(M)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass
class MeasurementStack:
    """Measurements of one stage together with the model needed to score them.

    ``mask`` optionally flags the hypotheses that are physically possible
    (sub-range combinations whose sub-ranges are non-empty).
    """

    y: np.ndarray
    G: np.ndarray
    P: float
    C: float
    N: int
    P_R: float
    N0: float
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=complex)
        self.G = np.asarray(self.G)
        if self.y.ndim != 1 or self.G.ndim != 2 or self.G.shape[0] != self.y.shape[0]:
            raise ValueError(f"y has {self.y.shape} entries but G has shape {self.G.shape}")

    @property
    def sigma2(self) -> float:
        return self.P * self.N**2 * self.C**4 * self.P_R

    @property
    def n_hypotheses(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class Hypothesis:
    """1-based combined index ``d`` and its transmit/receive sub-ranges."""

    d: int
    k_t: int
    k_r: int

    @classmethod
    def from_index(cls, d: int, K: int) -> "Hypothesis":
        k_t = -(-d // K)
        return cls(d, k_t, d - K * (k_t - 1))


def combined_index(k_t: int, k_r: int, K: int) -> int:
    return K * (k_t - 1) + k_r


def hypothesis_covariance(stack: MeasurementStack, d: int) -> np.ndarray:
    if not 1 <= d <= stack.n_hypotheses:
        raise ValueError(f"hypothesis {d} outside 1..{stack.n_hypotheses}")
    g = stack.G[:, d - 1]
    n = len(stack.y)
    return stack.sigma2 * np.outer(g, np.conj(g)) + stack.N0 * np.eye(n)


def _check_finite(stack):
    if not np.all(np.isfinite(stack.y)):
        raise ValueError("measurement vector contains non-finite entries")


def log_likelihood(stack: MeasurementStack, d: int) -> float:
    """``log f(y | d)`` for the zero-mean complex Gaussian model, via rank-one identities."""
    _check_finite(stack)
    if not 1 <= d <= stack.n_hypotheses:
        raise ValueError(f"hypothesis {d} outside 1..{stack.n_hypotheses}")
    if stack.N0 <= 0:
        raise SingularCovarianceError("log-likelihood needs N0 > 0 (covariance is rank-deficient)")
    y, N0, s2 = stack.y, stack.N0, stack.sigma2
    g = stack.G[:, d - 1]
    n = len(y)
    gg = float(np.sum(np.abs(g) ** 2))
    gy = np.vdot(g, y)
    logdet = n * math.log(N0) + math.log1p(s2 * gg / N0)
    quad = (np.vdot(y, y).real - s2 * abs(gy) ** 2 / (N0 + s2 * gg)) / N0
    return -n * math.log(math.pi) - logdet - quad


def log_likelihood_dense(stack: MeasurementStack, d: int) -> float:
    """Same quantity through an explicit covariance, determinant and solve."""
    _check_finite(stack)
    cov = hypothesis_covariance(stack, d)
    sign, logdet = np.linalg.slogdet(cov)
    if sign == 0 or not np.isfinite(logdet):
        raise SingularCovarianceError(f"covariance for hypothesis {d} is singular")
    quad = np.vdot(stack.y, np.linalg.solve(cov, stack.y)).real
    return -len(stack.y) * math.log(math.pi) - logdet - quad


def relative_log_likelihoods(y, G, sigma2, N0):
    """Per-hypothesis log-likelihoods up to a hypothesis-independent offset.

    Broadcasts over leading batch axes: ``y`` is ``(..., M)``, ``G`` is
    ``(..., M, D)``, ``sigma2`` and ``N0`` broadcast against ``(...)``.
    Zero rows of ``G`` paired with zero entries of ``y`` do not change the
    result, which lets callers pad stacks of unequal length.
    """
    y = np.asarray(y)
    G = np.asarray(G)
    gg = np.sum(np.abs(G) ** 2, axis=-2)
    gy = np.einsum("...md,...m->...d", np.conj(G), y)
    return log_likelihoods_from_stats(gg, gy, sigma2, N0)


def log_likelihoods_from_stats(gg, gy, sigma2, N0):
    """Relative log-likelihoods from ``gg = ||g_d||**2`` and ``gy = g_d^H y``.

    These two statistics are all the rank-one model needs, so callers that
    grow a stack one slot at a time can update them in ``O(D)``.
    """
    sigma2 = np.asarray(sigma2, dtype=float)[..., None]
    N0 = np.asarray(N0, dtype=float)[..., None]
    gg = np.asarray(gg, dtype=float)
    return -np.log1p(sigma2 * gg / N0) + sigma2 * np.abs(gy) ** 2 / (N0 * (N0 + sigma2 * gg))


def _noiseless_posterior(y, G, mask, rtol=1e-9):
    # N0 -> 0 limit: all mass on the hypotheses with the smallest projection residual
    yy = float(np.vdot(y, y).real)
    gg = np.sum(np.abs(G) ** 2, axis=0)
    gy = np.abs(np.conj(G).T @ y) ** 2
    resid = yy - np.divide(gy, gg, out=np.zeros_like(gy), where=gg > 0)
    resid = np.where(mask, resid, np.inf)
    win = resid <= resid.min() + rtol * max(yy, 1e-300)
    return win / win.sum()


def posterior(stack: MeasurementStack) -> np.ndarray:
    """Posterior probability of each single-path hypothesis under a uniform prior."""
    _check_finite(stack)
    D = stack.n_hypotheses
    mask = np.ones(D, dtype=bool) if stack.mask is None else np.asarray(stack.mask, dtype=bool)
    if not mask.any():
        raise ValueError("no admissible hypothesis")
    if stack.N0 == 0:
        return _noiseless_posterior(stack.y, stack.G, mask)
    ll = relative_log_likelihoods(stack.y, stack.G, stack.sigma2, stack.N0)
    ll = np.where(mask, ll, -np.inf)
    if not np.isfinite(ll).any():
        raise FloatingPointError("all hypotheses have zero likelihood")
    return np.exp(ll - logsumexp(ll))


def detect(stack: MeasurementStack, K: int | None = None) -> tuple[Hypothesis, float]:
    """Most probable hypothesis (lowest ``d`` on ties) and its posterior mass.

    ``K`` is the number of receive sub-ranges used to split ``d``; it
    defaults to ``sqrt(D)``.
    """
    p = posterior(stack)
    if K is None:
        K = math.isqrt(stack.n_hypotheses)
    d = int(np.argmax(p)) + 1
    return Hypothesis.from_index(d, K), float(p[d - 1])
