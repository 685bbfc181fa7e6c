"""Multi-stage FCE and RACE estimation on an explicit channel matrix.

This is the reference, one-trial-at-a-time implementation: every pilot slot
goes through :func:`mmwce.grid.measure` with explicit beamforming vectors.
The vectorised Monte Carlo engine in :mod:`mmwce.montecarlo` is checked
against it.

Per-row gain constants.  On a non-DFT grid the synthesised beams of one
stage need not share a single gain constant.  The stage constant ``C_s`` is
taken as the geometric mean and the per-row deviations are folded into an
*effective* generator ``G_eff = (A_T odot A_R) / C_s**2``, where ``A[m, k]``
is the achieved response of beam ``m`` on sub-range ``k``.  The measurement
model ``y = sqrt(P_s) N C_s**2 G_eff v + n`` is then exact; for balanced
designs ``G_eff`` equals the nominal generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .codebook import (
    Beamformer,
    SubRangePartition,
    default_design_K3_M4,
    generator,
    initial_partition,
    num_stages,
    refine_partition,
    stage_gain_constant,
    synthesize_beamformer,
)
from .detector import MeasurementStack, combined_index, detect
from .grid import NoiseModel, SteeringAngleGrid, measure

ALGORITHMS = ("fce", "race", "baseline", "exhaustive")


@dataclass
class EstimatorConfig:
    """Parameters shared by all estimators.

    ``B_T``/``B_R`` default to the ``K=3, M=4`` overlapped design.  ``P_T``
    is the power-allocation constant (``P_s = P_T / C_s**4``).
    """

    N: int = 27
    K: int = 3
    P_T: float = 1.0
    N0: float = 1.0
    P_R: float = 1.0
    Gamma: float = 1e-2
    M_max: int | None = None
    L: int = 1
    algorithm: str = "fce"
    convention: str = "paper-literal"
    B_T: np.ndarray | None = None
    B_R: np.ndarray | None = None

    def __post_init__(self):
        if self.B_T is None or self.B_R is None:
            if self.K != 3:
                raise ValueError("default design only exists for K=3; pass B_T and B_R")
            self.B_T, self.B_R = default_design_K3_M4()
        self.B_T = np.asarray(self.B_T, dtype=float)
        self.B_R = np.asarray(self.B_R, dtype=float)
        if self.B_T.shape != self.B_R.shape or self.B_T.shape[1] != self.K:
            raise ValueError(f"design shapes {self.B_T.shape}, {self.B_R.shape} do not match K={self.K}")
        if self.M_max is None:
            self.M_max = self.M
        if self.M < 1 or self.M_max < self.M:
            raise ValueError(f"need 1 <= M <= M_max, got M={self.M}, M_max={self.M_max}")
        if not 0 < self.Gamma < 1:
            raise ValueError(f"target error probability must lie in (0, 1), got {self.Gamma}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")

    @property
    def M(self) -> int:
        return self.B_T.shape[0]

    @property
    def S(self) -> int:
        return num_stages(self.N, self.K)

    @property
    def grid(self) -> SteeringAngleGrid:
        return SteeringAngleGrid(self.N, self.convention)


def stage_power(P_T: float, C_s: float) -> float:
    """Per-stage pilot power ``P_T / C_s**4`` (equalises received SNR across stages)."""
    if not C_s > 0:
        raise ValueError(f"gain constant must be positive, got {C_s}")
    return P_T / C_s**4


def feedback_bits(K: int, algorithm: str, R: int = 0) -> int:
    if algorithm == "race":
        return (R + 1) * math.ceil(math.log2(K) + 1)
    return math.ceil(math.log2(K))


# -- beams for one stage ----------------------------------------------------


@lru_cache(maxsize=4096)
def _row_beam(grid: SteeringAngleGrid, partition: SubRangePartition, row: tuple) -> tuple[Beamformer, tuple]:
    amps = np.array(row)
    lit = [k for k in range(partition.K) if amps[k] > 0 and partition.sizes[k] > 0]
    if not lit:
        # the row only covers empty sub-ranges: fall back to a flat beam over the active range
        amps = np.array([1.0 if s > 0 else 0.0 for s in partition.sizes])
    beam = synthesize_beamformer(grid, partition, amps)
    resp = beam.response(grid).real
    gains = tuple(float(resp[a]) if b > a else 0.0 for a, b in partition.bounds)
    return beam, gains


def row_beams(grid, partition, B):
    """Beamformers for each row of ``B`` and their achieved per-sub-range gains ``A``."""
    out = [_row_beam(grid, partition, tuple(float(x) for x in row)) for row in np.atleast_2d(B)]
    return [b for b, _ in out], np.array([g for _, g in out])


@dataclass
class StageState:
    """Everything one stage needs and accumulates.

    ``y_raw`` holds the received samples; ``offset`` is the expected
    contribution of already-estimated paths expressed on the hypothesis
    axis, so the residual used for detection is ``y_raw - G_eff @ offset``.
    """

    s: int
    part_t: SubRangePartition
    part_r: SubRangePartition
    B_T: np.ndarray
    B_R: np.ndarray
    tx: list
    rx: list
    A_T: np.ndarray
    A_R: np.ndarray
    C_s: float
    P_s: float
    M: int
    y_raw: list = field(default_factory=list)
    offset: np.ndarray | None = None
    d_hat: int | None = None
    confidence: float | None = None

    @property
    def G_eff(self) -> np.ndarray:
        return generator(self.A_T, self.A_R) / self.C_s**2

    @property
    def R(self) -> int:
        return len(self.y_raw) - self.M

    @property
    def slots(self) -> int:
        return len(self.y_raw)

    @property
    def mask(self) -> np.ndarray:
        st = np.array(self.part_t.sizes) > 0
        sr = np.array(self.part_r.sizes) > 0
        return (st[:, None] & sr[None, :]).ravel()

    @property
    def y(self) -> np.ndarray:
        y = np.asarray(self.y_raw, dtype=complex)
        if self.offset is not None:
            y = y - self.G_eff[: len(y)] @ self.offset
        return y

    def stack(self, config: EstimatorConfig) -> MeasurementStack:
        n = len(self.y_raw)
        return MeasurementStack(self.y, self.G_eff[:n], self.P_s, self.C_s, config.N, config.P_R, config.N0, self.mask)

    def append_row(self, grid, b_t, b_r):
        tx, a_t = row_beams(grid, self.part_t, b_t)
        rx, a_r = row_beams(grid, self.part_r, b_r)
        self.B_T = np.vstack([self.B_T, b_t])
        self.B_R = np.vstack([self.B_R, b_r])
        self.tx += tx
        self.rx += rx
        self.A_T = np.vstack([self.A_T, a_t])
        self.A_R = np.vstack([self.A_R, a_r])


def new_stage(config: EstimatorConfig, part_t, part_r, B_T=None, B_R=None) -> StageState:
    B_T = config.B_T if B_T is None else B_T
    B_R = config.B_R if B_R is None else B_R
    grid = config.grid
    tx, A_T = row_beams(grid, part_t, B_T)
    rx, A_R = row_beams(grid, part_r, B_R)
    C_s = math.sqrt(stage_gain_constant(tx, check=False) * stage_gain_constant(rx, check=False))
    return StageState(
        s=part_t.stage, part_t=part_t, part_r=part_r, B_T=np.array(B_T), B_R=np.array(B_R),
        tx=tx, rx=rx, A_T=A_T, A_R=A_R, C_s=C_s, P_s=stage_power(config.P_T, C_s), M=len(B_T),
    )


def set_prior_paths(state: StageState, config: EstimatorConfig, prior) -> None:
    """Register already-estimated paths ``(alpha_hat, phiT_idx, phiR_idx)`` for subtraction.

    A path whose estimated angles fall outside the active ranges contributes
    nothing (the synthesised beams are exactly zero on those grid angles).
    """
    K = config.K
    off = np.zeros(state.part_t.K * state.part_r.K, dtype=complex)
    scale = math.sqrt(state.P_s) * config.N * state.C_s**2
    for alpha_hat, it, ir in prior:
        kt, kr = state.part_t.subrange_of(it), state.part_r.subrange_of(ir)
        if kt is None or kr is None:
            continue
        off[combined_index(kt, kr, K) - 1] += scale * alpha_hat
    state.offset = off if prior else None


def _measure_rows(H, state, rows, config, rng):
    noise = NoiseModel(config.N0, rng)
    for m in rows:
        state.y_raw.append(measure(H, state.tx[m], state.rx[m], state.P_s, noise))


def _decide(state, config):
    hyp, conf = detect(state.stack(config), K=state.part_r.K)
    state.d_hat, state.confidence = hyp.d, conf
    return hyp, conf


def run_stage_fce(H, state: StageState, config: EstimatorConfig, rng):
    """Measure the ``M`` scheduled beam pairs once and pick the ML sub-range pair."""
    _measure_rows(H, state, range(state.M), config, rng)
    hyp, conf = _decide(state, config)
    return hyp.k_t, hyp.k_r, conf, state


def run_stage_race(H, state: StageState, config: EstimatorConfig, rng):
    """FCE stage followed by one-hot confirmation slots while confidence < 1 - Gamma."""
    k_t, k_r, conf, state = run_stage_fce(H, state, config, rng)
    grid, K = config.grid, config.K
    while conf < 1.0 - config.Gamma and state.slots < config.M_max:
        state.append_row(grid, np.eye(K)[k_t - 1], np.eye(K)[k_r - 1])
        _measure_rows(H, state, [state.slots], config, rng)
        hyp, conf = _decide(state, config)
        k_t, k_r = hyp.k_t, hyp.k_r
    return k_t, k_r, conf, state


# -- coefficient estimation -------------------------------------------------


def lmmse_alpha(r, r_hat, P_R: float, N0: float) -> complex:
    """``P_R r_hat^H (P_R r_hat r_hat^H + N0 I)^{-1} r`` in its scalar (Sherman-Morrison) form."""
    r = np.asarray(r, dtype=complex)
    r_hat = np.asarray(r_hat, dtype=complex)
    e = float(np.vdot(r_hat, r_hat).real)
    if N0 == 0 and e == 0:
        raise ZeroDivisionError("LMMSE undefined: N0 = 0 and no signal energy in the model")
    return complex(P_R * np.vdot(r_hat, r) / (P_R * e + N0))


def lmmse_alpha_matrix(r, r_hat, P_R: float, N0: float) -> complex:
    """Dense matrix form of :func:`lmmse_alpha` (used as a cross-check)."""
    r = np.asarray(r, dtype=complex)
    r_hat = np.asarray(r_hat, dtype=complex)
    C = P_R * np.outer(r_hat, r_hat.conj()) + N0 * np.eye(len(r))
    return complex(P_R * np.conj(r_hat) @ np.linalg.solve(C, r))


def regressor(state: StageState, config: EstimatorConfig) -> np.ndarray:
    """Expected response of a unit-gain path in the selected combination, one entry per slot."""
    G = state.G_eff[: state.slots]
    return math.sqrt(state.P_s) * config.N * state.C_s**2 * G[:, state.d_hat - 1]


def stages_lmmse(stages, config: EstimatorConfig) -> complex:
    r = np.concatenate([st.y for st in stages])
    r_hat = np.concatenate([regressor(st, config) for st in stages])
    return lmmse_alpha(r, r_hat, config.P_R, config.N0)


# -- full estimation --------------------------------------------------------


@dataclass
class EstimateResult:
    phiT_idx: int
    phiR_idx: int
    phiT_hat: float
    phiR_hat: float
    alpha_hat: complex
    alpha_hat_final: complex
    measurements: int
    energy: float
    feedback_bits: int
    decisions: list
    confidences: list
    stage_slots: list
    stage_powers: list

    @property
    def min_confidence(self) -> float:
        return min(self.confidences)


def angle_from_decisions(k_seq, K: int, N: int, grid: SteeringAngleGrid | None = None) -> float:
    """``(pi / N) sum_s (k_s - 1) K**(S - s)``, or the grid value of that index if a grid is given."""
    S = len(k_seq)
    idx = sum((k - 1) * K ** (S - s) for s, k in enumerate(k_seq, start=1))
    if grid is not None:
        return grid.angle(idx)
    return math.pi * idx / N


def run_multistage(H, config: EstimatorConfig, rng, prior=()) -> EstimateResult:
    """Run all ``S`` stages (FCE, RACE or the non-overlapped baseline) and estimate ``alpha``.

    ``prior`` lists ``(alpha_hat, phiT_idx, phiR_idx)`` of paths already
    found; their expected contribution is removed before each detection.
    """
    if config.algorithm == "baseline":
        from .baselines import onehot_schedule, run_stage_nonoverlapped

        B_T, B_R = onehot_schedule(config.K)
        step = run_stage_nonoverlapped
    elif config.algorithm in ("fce", "race"):
        B_T, B_R = config.B_T, config.B_R
        step = run_stage_race if config.algorithm == "race" else run_stage_fce
    else:
        raise ValueError(f"run_multistage does not handle algorithm {config.algorithm!r}")
    grid = config.grid
    part_t = initial_partition(config.N, config.K)
    part_r = part_t
    stages = []
    for _ in range(config.S):
        state = new_stage(config, part_t, part_r, B_T, B_R)
        set_prior_paths(state, config, prior)
        k_t, k_r, _, state = step(H, state, config, rng)
        stages.append(state)
        part_t = refine_partition(part_t, k_t, config.K)
        part_r = refine_partition(part_r, k_r, config.K)
    # after S stages each active range is a single grid angle
    it, ir = part_t.active[0], part_r.active[0]
    alpha = stages_lmmse(stages, config)
    alpha_final = stages_lmmse(stages[-1:], config)
    fb = sum(feedback_bits(config.K, config.algorithm, st.R) for st in stages)
    return EstimateResult(
        phiT_idx=it, phiR_idx=ir, phiT_hat=grid.angle(it), phiR_hat=grid.angle(ir),
        alpha_hat=alpha, alpha_hat_final=alpha_final,
        measurements=sum(st.slots for st in stages),
        energy=float(sum(st.P_s * st.slots for st in stages)),
        feedback_bits=fb,
        decisions=[st.d_hat for st in stages],
        confidences=[st.confidence for st in stages],
        stage_slots=[st.slots for st in stages],
        stage_powers=[st.P_s for st in stages],
    )


def estimate_multipath(H, config: EstimatorConfig, rng) -> list[EstimateResult]:
    """Estimate ``config.L`` paths one after another, subtracting earlier estimates."""
    results: list[EstimateResult] = []
    for _ in range(config.L):
        prior = [(r.alpha_hat, r.phiT_idx, r.phiR_idx) for r in results]
        results.append(run_multistage(H, config, rng, prior=prior))
    return results


def with_algorithm(config: EstimatorConfig, algorithm: str, **kw) -> EstimatorConfig:
    return replace(config, algorithm=algorithm, **kw)
