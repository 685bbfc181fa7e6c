import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmwce.codebook import (
    Beamformer,
    ConditioningError,
    DesignSearchError,
    DesignViolationError,
    default_design_K3_M4,
    generator,
    initial_partition,
    load_design,
    min_column_distance,
    normalize_design,
    num_stages,
    refine_partition,
    save_design,
    search_optimal_design,
    stage_gain_constant,
    synthesize_beamformer,
    target_response,
)
from mmwce.grid import SteeringAngleGrid
from oracles import beam_gain_dense, ceil_split, generator_loop, literal_angle, pair_scan

R2, R3 = math.sqrt(2), math.sqrt(3)
G_DEFAULT = np.array([
    [2, R2, 0, R2, 1, 0, 0, 0, 0],
    [0, R2, 2, 0, 1, R2, 0, 0, 0],
    [0, 0, 0, R2, 1, 0, 2, R2, 0],
    [0, 0, 0, 0, 1, R2, 0, R2, 2],
]) / 3
# pair_scan(generator_loop(default design)); equals sqrt((8 - 4 sqrt 2) / 9)
D_MIN_DEFAULT = 0.5102445764867863
# beam_gain_dense(27, paper-literal grid, stage-1 target of b1)
C_STAGE1_B1 = 0.31308661898141477


def test_default_design_entries_and_norms():
    B_T, B_R = default_design_K3_M4()
    assert B_T[0, 0] == pytest.approx(R2 / R3, abs=1e-15)
    assert B_T[0, 0] == pytest.approx(0.8165, abs=1e-4)
    for B in (B_T, B_R):
        np.testing.assert_allclose(np.linalg.norm(B, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(B, axis=0), math.sqrt(4 / 3), atol=1e-12)
    np.testing.assert_array_equal(B_T[0], B_T[1])
    np.testing.assert_array_equal(B_R[0], B_R[2])


def test_generator_default_matches_closed_form():
    np.testing.assert_allclose(generator(*default_design_K3_M4()), G_DEFAULT, atol=1e-12, rtol=0)


def test_generator_one_hot_rows():
    K = 3
    for i, j in itertools.product(range(1, K + 1), repeat=2):
        G = generator(np.eye(K)[[i - 1]], np.eye(K)[[j - 1]])
        expect = np.zeros(K * K)
        expect[K * (i - 1) + j - 1] = 1
        np.testing.assert_array_equal(G[0], expect)


def test_generator_random_matches_double_loop():
    rng = np.random.default_rng(4)
    B_T, B_R = rng.random((5, 2)), rng.random((5, 2))
    np.testing.assert_array_equal(generator(B_T, B_R), np.array(generator_loop(B_T.tolist(), B_R.tolist())))


def test_generator_shape_mismatch():
    with pytest.raises(ValueError):
        generator(np.ones((4, 3)), np.ones((3, 3)))


@settings(max_examples=50, deadline=None)
@given(
    M=st.integers(1, 6),
    K=st.integers(2, 4),
    data=st.data(),
)
def test_generator_columns_are_products(M, K, data):
    el = st.floats(0, 1, allow_nan=False)
    B_T = data.draw(arrays(float, (M, K), elements=el))
    B_R = data.draw(arrays(float, (M, K), elements=el))
    G = generator(B_T, B_R)
    for kt, kr in itertools.product(range(1, K + 1), repeat=2):
        np.testing.assert_array_equal(G[:, K * (kt - 1) + kr - 1], B_T[:, kt - 1] * B_R[:, kr - 1])


def test_min_distance_default_design():
    G = generator(*default_design_K3_M4())
    d, neigh = min_column_distance(G)
    assert d == pytest.approx(D_MIN_DEFAULT, abs=1e-12)
    assert d == pytest.approx(pair_scan(G.tolist()), abs=1e-12)
    assert d == pytest.approx(math.sqrt((8 - 4 * R2) / 9), abs=1e-12)
    assert np.linalg.norm(G[:, 0] - G[:, 1]) == pytest.approx(d, abs=1e-12)
    # every column attains the same minimum distance
    for j, nb in enumerate(neigh, start=1):
        assert nb and all(np.linalg.norm(G[:, j - 1] - G[:, i - 1]) == pytest.approx(d, abs=1e-12) for i in nb)


def test_min_distance_scaled_identity_and_duplicates():
    d, _ = min_column_distance(0.7 * np.eye(9))
    assert d == pytest.approx(0.7 * R2)
    G = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert min_column_distance(G)[0] == 0.0


# -- partitions -------------------------------------------------------------


def test_refine_exact_split():
    part = refine_partition(initial_partition(27, 3), 1, 3)
    assert part.active == (0, 9)
    assert part.bounds == ((0, 3), (3, 6), (6, 9))
    assert part.stage == 2


def test_three_refinements_reach_singleton():
    part = initial_partition(27, 3)
    for k in (2, 3, 1):
        part = refine_partition(part, k, 3)
    assert part.active[1] - part.active[0] == 1
    assert num_stages(27, 3) == 3


def test_ceil_split_non_power():
    part = initial_partition(10, 3)
    assert part.sizes == (4, 3, 3)
    assert list(part.bounds) == ceil_split(0, 10, 3)


def test_refine_errors():
    part = initial_partition(2, 3)
    assert part.sizes == (1, 1, 0)
    with pytest.raises(RuntimeError):
        refine_partition(part, 3, 3)
    with pytest.raises(ValueError):
        refine_partition(part, 4, 3)


@settings(max_examples=60, deadline=None)
@given(N=st.integers(2, 200), K=st.integers(2, 5), data=st.data())
def test_partitions_cover_active_range(N, K, data):
    part = initial_partition(N, K)
    while part.active[1] - part.active[0] > 1:
        assert max(part.sizes) - min(part.sizes) <= 1
        assert part.bounds[0][0] == part.active[0] and part.bounds[-1][1] == part.active[1]
        assert all(a[1] == b[0] for a, b in zip(part.bounds, part.bounds[1:]))
        nonempty = [k for k in range(1, K + 1) if part.sizes[k - 1] > 0]
        part = refine_partition(part, data.draw(st.sampled_from(nonempty)), K)
    assert part.stage - 1 <= num_stages(N, K)


def test_num_stages():
    assert [num_stages(n, 3) for n in (1, 3, 4, 9, 10, 27, 28)] == [0, 1, 2, 2, 3, 3, 4]


# -- synthesis --------------------------------------------------------------


def test_single_angle_beams_k_equals_n():
    grid = SteeringAngleGrid(5)
    part = initial_partition(5, 5)
    for i in range(5):
        beam = synthesize_beamformer(grid, part, np.eye(5)[i])
        np.testing.assert_allclose(beam.response(grid), beam.C * np.eye(5)[i], atol=1e-6)
        assert np.linalg.norm(beam.vector) == pytest.approx(1.0, abs=1e-9)


def test_stage1_beams_match_target_and_oracle():
    grid = SteeringAngleGrid(27)
    part = initial_partition(27, 3)
    B_T, _ = default_design_K3_M4()
    eps = [literal_angle(27, i) for i in range(27)]
    for row in B_T:
        beam = synthesize_beamformer(grid, part, row)
        z = target_response(grid, part, row)
        assert np.max(np.abs(np.abs(beam.response(grid)) - beam.C * z)) <= 1e-6
        f_ref, C_ref = beam_gain_dense(27, eps, z)
        assert beam.C == pytest.approx(C_ref, rel=1e-9)
        assert beam.C == pytest.approx(C_STAGE1_B1, rel=1e-9)
        assert abs(np.vdot(f_ref, beam.vector)) == pytest.approx(1.0, abs=1e-9)


def test_mirrored_rows_share_gain_constant():
    grid = SteeringAngleGrid(27)
    part = initial_partition(27, 3)
    b1, b2 = default_design_K3_M4()[0][[0, 2]]
    assert synthesize_beamformer(grid, part, b1).C == pytest.approx(synthesize_beamformer(grid, part, b2).C, rel=1e-9)


def test_synthesis_errors():
    grid = SteeringAngleGrid(9)
    part = initial_partition(9, 3)
    with pytest.raises(ValueError):
        synthesize_beamformer(grid, part, [0, 0, 0])
    with pytest.raises(ValueError):
        synthesize_beamformer(grid, part, [1, 0])
    with pytest.raises(ConditioningError, match="condition number"):
        synthesize_beamformer(SteeringAngleGrid(256), initial_partition(256, 3), [1, 0, 0])


def test_stage_gain_constant_symmetric_design():
    grid = SteeringAngleGrid(27)
    part = initial_partition(27, 3)
    beams = [synthesize_beamformer(grid, part, row) for row in default_design_K3_M4()[0]]
    Cs = [b.C for b in beams]
    assert (max(Cs) - min(Cs)) / max(Cs) <= 1e-6
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert stage_gain_constant(beams) == pytest.approx(C_STAGE1_B1, rel=1e-9)


def test_stage_gain_constant_single_and_warning_paths():
    v = np.array([1.0, 0.0])
    assert stage_gain_constant([Beamformer(v, 0.37)]) == 0.37
    with pytest.warns(RuntimeWarning):
        C = stage_gain_constant([Beamformer(v, 1.0), Beamformer(v, 1.001)])
    assert C == pytest.approx(math.sqrt(1.001))
    # unequal row weights on the non-DFT grid: far outside tolerance
    grid = SteeringAngleGrid(27)
    part = initial_partition(27, 3)
    beams = [synthesize_beamformer(grid, part, r) for r in ([1, 0, 0], [0, 1, 0])]
    with pytest.raises(DesignViolationError):
        stage_gain_constant(beams)
    assert stage_gain_constant(beams, check=False) == pytest.approx(math.sqrt(beams[0].C * beams[1].C))
    with pytest.raises(ValueError):
        stage_gain_constant([])


# -- design search ----------------------------------------------------------


def _oracle_search(M, K, W):
    """First strict maximiser over lexicographically ordered binarisations, via loops."""
    rows = sorted(tuple(1 if k in c else 0 for k in range(K)) for c in itertools.combinations(range(K), W))

    def norm(Bb):
        B = [list(map(float, r)) for r in Bb]
        for k in range(K):
            c = math.sqrt(sum(B[m][k] ** 2 for m in range(M)))
            for m in range(M):
                B[m][k] = B[m][k] / c if c else 0.0
        for m in range(M):
            r = math.sqrt(sum(x * x for x in B[m]))
            B[m] = [x / r if r else 0.0 for x in B[m]]
        return B

    best, arg = -1.0, None
    for bt in itertools.product(rows, repeat=M):
        for br in itertools.product(rows, repeat=M):
            BT, BR = norm(bt), norm(br)
            G = generator_loop(BT, BR)
            if any(all(G[m][d] == 0 for m in range(M)) for d in range(K * K)):
                continue
            d = pair_scan(G)
            if d > best + 1e-12:
                best, arg = d, (BT, BR)
    return best, arg


def test_search_matches_bruteforce_oracle():
    best, (BT, BR) = _oracle_search(4, 3, 2)
    B_T, B_R, d = search_optimal_design(4, 3, 3, 2, 2)
    assert d == pytest.approx(best, abs=1e-12)
    np.testing.assert_allclose(B_T, BT, atol=1e-12)
    np.testing.assert_allclose(B_R, BR, atol=1e-12)


def test_search_at_least_default_design():
    _, _, d = search_optimal_design(4, 3, 3, 2, 2)
    assert d >= D_MIN_DEFAULT - 1e-12


def test_search_full_width_rows_rejected():
    with pytest.raises(DesignSearchError):
        search_optimal_design(4, 3, 3, 3, 3)


def test_search_tiny_case_without_admissible_design():
    # with one lit sub-range per row, two slots reach at most two of the
    # four combinations, so some generator column is always zero
    with pytest.raises(DesignSearchError):
        search_optimal_design(2, 2, 2, 1, 1)
    with pytest.raises(DesignSearchError):
        search_optimal_design(3, 2, 2, 1, 1)


def test_search_three_slots_cannot_separate_nine_combinations():
    assert _oracle_search(3, 3, 2)[0] == 0.0
    with pytest.raises(DesignSearchError, match="indistinguishable"):
        search_optimal_design(3, 3, 3, 2, 2)


def test_search_tiny_case_one_hot_schedule():
    B_T, B_R, d = search_optimal_design(4, 2, 2, 1, 1)
    G = generator(B_T, B_R)
    # each slot isolates one combination; columns form a permuted identity
    np.testing.assert_allclose(np.sort(G, axis=0)[-1], 1.0)
    assert np.count_nonzero(G) == 4
    assert d == pytest.approx(R2)


def test_search_budget_cap():
    with pytest.raises(DesignSearchError, match="cap"):
        search_optimal_design(6, 3, 3, 2, 2, cap=1000)
    with pytest.raises(ValueError):
        search_optimal_design(4, 3, 3, 0, 2)


def test_search_monotone_in_M_small():
    ds = [search_optimal_design(M, 2, 2, 1, 1)[2] for M in (4, 5, 6)]
    assert all(b >= a - 1e-12 for a, b in zip(ds, ds[1:]))


def test_searched_design_norms():
    for M in (4, 5):
        B_T, B_R, _ = search_optimal_design(M, 3, 3, 2, 2)
        for B in (B_T, B_R):
            np.testing.assert_allclose(np.linalg.norm(B, axis=1), 1.0, atol=1e-9)
            cn = np.linalg.norm(B, axis=0)
            assert np.all(cn > 0)


def test_normalize_design_zero_lines_stay_zero():
    B = normalize_design(np.array([[1.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(B, [[1.0, 0.0], [1.0, 0.0]])


def test_design_file_round_trip(tmp_path):
    B_T, B_R = default_design_K3_M4()
    path = save_design(tmp_path / "d.txt", B_T, B_R, W_T=2, W_R=2, convention="paper-literal")
    text = path.read_text().splitlines()
    assert text[0].startswith("# M=4 K_T=3 K_R=3 W_T=2 W_R=2")
    BT2, BR2, meta = load_design(path)
    np.testing.assert_array_equal(BT2, B_T)
    np.testing.assert_array_equal(BR2, B_R)
    assert meta["convention"] == "paper-literal"


def test_design_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2 3\n")
    with pytest.raises(ValueError):
        load_design(bad)
    with pytest.raises(OSError):
        save_design(tmp_path / "missing" / "d.txt", np.eye(2), np.eye(2))
