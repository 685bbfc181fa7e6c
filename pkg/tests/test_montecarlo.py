import math

import numpy as np
import pytest

from mmwce.baselines import exhaustive_sweep
from mmwce.estimators import EstimatorConfig, estimate_multipath, feedback_bits
from mmwce.grid import PathParams, SteeringAngleGrid, build_channel
from mmwce.montecarlo import BeamBook, draw_paths, simulate, simulate_exhaustive


class RecordingRNG:
    """Stands in for a Generator inside the scalar estimators and keeps every noise sample."""

    def __init__(self, seed):
        self._g = np.random.default_rng(seed)
        self.samples = []

    def standard_normal(self, shape):
        z = self._g.standard_normal(shape)
        self.samples.append(complex(z[..., 0], z[..., 1]) / math.sqrt(2))
        return z


def _scalar_then_batch(algorithm, L, N0, P_T, M_max=None, T=30, N=27, seed=1):
    rng = np.random.default_rng(seed)
    cfg = EstimatorConfig(N=N, P_T=P_T, N0=N0, algorithm=algorithm, M_max=M_max, L=L)
    S = cfg.S
    slots = 9 if algorithm == "baseline" else cfg.M_max
    alpha = (rng.standard_normal((T, L)) + 1j * rng.standard_normal((T, L))) / math.sqrt(2)
    it = rng.integers(0, N, (T, L))
    ir = rng.integers(0, N, (T, L))
    noise = np.zeros((T, L, S, slots), complex)
    scalar = []
    for t in range(T):
        H = build_channel(cfg.grid, [PathParams(alpha[t, l], it[t, l], ir[t, l]) for l in range(L)])
        rec = RecordingRNG(t)
        out = estimate_multipath(H, cfg, rec)
        k = 0
        for l, res in enumerate(out):
            for s, n in enumerate(res.stage_slots):
                if rec.samples:
                    noise[t, l, s, :n] = rec.samples[k : k + n]
                    k += n
        scalar.append(out)
    book = BeamBook.for_algorithm(algorithm, N, 3)
    batch = simulate(book, algorithm, P_T, N0, T, None, L=L, M_max=M_max, paths=(alpha, it, ir), noise=noise)
    return scalar, batch


@pytest.mark.parametrize("algorithm, M_max", [("fce", None), ("race", 9), ("baseline", None)])
@pytest.mark.parametrize("L, N0, P_T", [(1, 1.0, 0.3), (2, 1.0, 0.3), (1, 0.0, 1.0)])
def test_batch_engine_matches_scalar_estimators(algorithm, M_max, L, N0, P_T):
    scalar, batch = _scalar_then_batch(algorithm, L, N0, P_T, M_max)
    for t, results in enumerate(scalar):
        for l, r in enumerate(results):
            assert (r.phiT_idx, r.phiR_idx) == (batch.est_t[t, l], batch.est_r[t, l])
            assert r.stage_slots == list(batch.stage_slots[t, l])
            assert abs(r.alpha_hat - batch.alpha_hat[t, l]) <= 1e-8 * (1 + abs(r.alpha_hat))
        assert sum(r.measurements for r in results) == batch.measurements[t]
        assert sum(r.energy for r in results) == pytest.approx(batch.energy[t], rel=1e-12)
        assert sum(r.feedback_bits for r in results) == batch.feedback_bits[t]


def test_exhaustive_batch_matches_scalar_sweep():
    grid = SteeringAngleGrid(8)
    P, N0 = 0.01, 1.0
    g = math.sqrt(P) * 8
    for seed in range(5):
        paths = (np.array([[0.3 + 0.4j]]), np.array([[5]]), np.array([[2]]))
        batch = simulate_exhaustive(grid, P, N0, 1, np.random.default_rng(seed), paths=paths)
        H = build_channel(grid, [PathParams(0.3 + 0.4j, 5, 2)])
        (i, j), peak = exhaustive_sweep(H, P, N0, np.random.default_rng(seed), grid)
        assert (batch.est_t[0, 0], batch.est_r[0, 0]) == (i, j)
        assert abs(batch.alpha_hat[0, 0]) * (g * g + N0) / g == pytest.approx(peak, rel=1e-9)
        assert batch.measurements[0] == 64


def test_exhaustive_noiseless_always_right():
    b = simulate_exhaustive(SteeringAngleGrid(9), 1.0, 0.0, 500, np.random.default_rng(0))
    assert not b.errors.any()
    assert b.se_alpha.max() < 1e-20
    assert np.all(b.measurements == 81)


def test_draw_paths_shapes_and_fading():
    rng = np.random.default_rng(0)
    alpha, it, ir = draw_paths(rng, 1000, 2, 27, P_R=2.0, fading="awgn")
    assert alpha.shape == it.shape == ir.shape == (1000, 2)
    np.testing.assert_allclose(np.abs(alpha), math.sqrt(2.0))
    assert it.min() >= 0 and it.max() < 27
    alpha, _, _ = draw_paths(np.random.default_rng(1), 100_000, 1, 27)
    assert np.mean(np.abs(alpha) ** 2) == pytest.approx(1.0, rel=0.02)
    with pytest.raises(ValueError):
        draw_paths(rng, 1, 1, 3, fading="rician")


def test_common_random_numbers_across_algorithms():
    # channels are drawn before noise, so equal seeds give equal channels
    books = {a: BeamBook.for_algorithm(a, 27, 3) for a in ("fce", "baseline")}
    a = simulate(books["fce"], "fce", 1e6, 1.0, 200, np.random.default_rng(9))
    b = simulate(books["baseline"], "baseline", 1e6, 1.0, 200, np.random.default_rng(9))
    np.testing.assert_array_equal(a.est_t, b.est_t)
    np.testing.assert_array_equal(a.est_r, b.est_r)


def test_slot_bookkeeping():
    for alg, per in (("fce", 12), ("baseline", 27)):
        b = simulate(BeamBook.for_algorithm(alg, 27, 3), alg, 0.1, 1.0, 300, np.random.default_rng(2))
        assert np.all(b.measurements == per)
        assert np.all(b.feedback_bits == 3 * feedback_bits(3, alg))
    b = simulate(BeamBook.for_algorithm("race", 27, 3), "race", 0.01, 1.0, 300, np.random.default_rng(2), M_max=9)
    extra = b.stage_slots[:, 0, :] - 4
    np.testing.assert_array_equal(b.feedback_bits, np.sum((extra + 1) * feedback_bits(3, "race"), axis=1))


def test_energy_per_PT_on_dft_grid():
    book = BeamBook.for_algorithm("fce", 27, 3, convention="dft")
    C = [book.tx[s].C[0] for s in range(3)]
    assert book.energy_per_PT(4) == pytest.approx(4 * sum(c**-4 for c in C), rel=1e-9)
    b = simulate(book, "fce", 2.0, 1.0, 50, np.random.default_rng(0))
    np.testing.assert_allclose(b.energy, 2.0 * book.energy_per_PT(4), rtol=1e-9)


def test_simulate_validation():
    book = BeamBook.for_algorithm("fce", 9, 3)
    with pytest.raises(ValueError):
        simulate(book, "exhaustive", 1.0, 1.0, 5, np.random.default_rng())
    with pytest.raises(ValueError):
        simulate(book, "race", 1.0, 1.0, 5, np.random.default_rng(), M_max=2)
