import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import lsq_linear

from tilebench.dyadic import DyadicGrid, order_leq, tile_at
from tilebench.rank1 import (
    Rank1Map,
    UniquenessError,
    box_line_distance,
    bht_direct,
    bht_pairing,
    bht_space_oracle,
    bht_symbol,
    build_eta_from_gamma,
    check_symbol,
    eps_vec,
    gamma_family,
    leq_matrix,
    rank1_form,
    rank1_sparse_check,
    rank1_sparse_ratio,
    size_2_star_k,
    size_2_star_k_bruteforce,
    split_checks,
    tree_estimate_check,
    tree_estimate_ratio,
)
from tilebench.signal import Signal
from tilebench.treespace import Top, in_tree
from tilebench.wavepackets import TileFunction, iter_standard_tiles, transform_W, transform_W_all, wavelet

GAMMA = (1.0, -2.0, 1.0)


def indicator(L, frac, seed):
    rng = np.random.default_rng(seed)
    return Signal((rng.random(1 << L) < frac).astype(complex))


def scale_tiles(L, s):
    return [tile_at(L, s, m, l) for m in range(1 << s) for l in range(1 << (L - s))]


@pytest.fixture(scope="module")
def eta8():
    return build_eta_from_gamma(GAMMA, 1, 2, 0, scale_tiles(8, 6))


def random_one_tree(eta, rng, size):
    L = eta.L
    base = eta.tiles(0)
    Q = base[int(rng.integers(len(base)))]
    s_top = int(rng.integers(Q.space.scale, L + 1))
    I = DyadicGrid(0, 0, L).interval(s_top, Q.space.pos >> (s_top - Q.space.scale))
    top = Top(I, Q.freq.left)
    members = [P for P in base if in_tree(P, top, 1)]
    pick = rng.permutation(len(members))[:size]
    return [members[i] for i in pick]


# ---------------------------------------------------------------------------
# geometry


@settings(max_examples=60)
@given(st.lists(st.integers(-20, 20), min_size=3, max_size=3),
       st.sampled_from([(1, -2, 1), (2, -1, -1), (1, 3, -4), (5, -3, -2)]))
def test_box_line_distance_matches_least_squares(lo, gamma):
    g = np.array(gamma, float) / np.linalg.norm(gamma)
    lo = np.array(lo, float)
    # variables (x, t): minimize |x - t g| with x in the box, t free
    A = np.hstack([np.eye(3), -g[:, None]])
    res = lsq_linear(A, np.zeros(3), bounds=(np.r_[lo, -np.inf], np.r_[lo + 1, np.inf]), tol=1e-12)
    assert box_line_distance(lo[None, :], g)[0] ** 2 == pytest.approx(2 * res.cost, abs=1e-9)


def test_leq_matrix_matches_tile_order():
    L = 5
    rng = np.random.default_rng(0)
    tiles = list(iter_standard_tiles(L))
    pick = [tiles[i] for i in rng.choice(len(tiles), 60, replace=False)]
    ints = np.array([[P.space.scale, P.freq.pos, P.space.pos] for P in pick])
    for kappa in (1, 2, 3):
        M = leq_matrix(ints, ints, kappa)
        for i, P in enumerate(pick):
            for j, Q in enumerate(pick):
                assert M[i, j] == order_leq(P, Q, kappa)


def test_gamma_guards():
    with pytest.raises(ValueError):
        build_eta_from_gamma((1.0, -1.0, 0.0), 1, 2, 0, [])
    with pytest.raises(ValueError):
        build_eta_from_gamma((1.0, 1.0, 1.0), 1, 2, 0, [])
    with pytest.raises(ValueError):
        build_eta_from_gamma(GAMMA, 2, 2, 3, [])


def test_empty_base_set_gives_empty_map():
    eta = build_eta_from_gamma(GAMMA, 1, 2, 0, [])
    assert len(eta) == 0 and eta.checks["r4"]


def test_family_conditions_and_uniqueness():
    bands = {6: range(64)}
    fam = gamma_family(GAMMA, 1, 2, 0, bands)
    c = fam.checks()
    assert c["g1"] and c["g2"] and c["g3"] and c["injective"]
    assert len(fam) > 0
    assert all(len({Q for Q in [fam.Q(6, m)] if Q}) <= 1 for m in range(64))
    with pytest.raises(UniquenessError, match="several admissible cubes"):
        gamma_family(GAMMA, 1, 2, 0, bands, select="all")


def test_g1_filters_scales():
    L = 8
    tiles = [P for P in iter_standard_tiles(L) if P.space.scale in (4, 5, 6)]
    eta = build_eta_from_gamma(GAMMA, 2, 2, 0, tiles)
    assert set(eta.comp[0][:, 0].tolist()) == {6}
    eta = build_eta_from_gamma(GAMMA, 2, 2, 1, tiles)
    assert set(eta.comp[0][:, 0].tolist()) == {5}


def test_constructed_map_passes_r1_to_r4(eta8):
    c = eta8.checks
    assert c["r1"] and c["r2"] and c["r3"] and c["r4"]
    assert c["pairs_related"] > 0
    assert eta8.dropped + len(eta8) == len(scale_tiles(8, 6))
    for P in eta8.tiles(0)[:20]:
        for j in range(3):
            assert eta8.eta(P, j).space == P.space
    assert split_checks(eta8)["split_lacunary"]


def test_small_kappa_across_scales_is_rejected():
    # scales 3 and 8 are 5 kappa apart for kappa = 1: the order transfer fails
    with pytest.raises(ValueError, match="r3"):
        build_eta_from_gamma(GAMMA, 1, 2, 0, list(iter_standard_tiles(8)), kappa=1)


def test_hand_built_maps_rejected():
    L = 5
    P, Q = tile_at(L, 3, 0, 0), tile_at(L, 3, 1, 0)
    A, B = tile_at(L, 3, 4, 0), tile_at(L, 3, 6, 0)
    assert len(Rank1Map.from_tiles([(P, A, B), (Q, B, A)]))
    with pytest.raises(ValueError, match="r1"):
        Rank1Map.from_tiles([(P, A, B), (Q, A, tile_at(L, 3, 2, 0))])
    with pytest.raises(ValueError, match="r2"):
        Rank1Map.from_tiles([(P, tile_at(L, 3, 4, 1), B)])
    # P, Q siblings and their second images siblings as well: only one primed index
    with pytest.raises(ValueError, match="r4"):
        Rank1Map.from_tiles([(P, A, B), (Q, tile_at(L, 3, 5, 0), tile_at(L, 3, 2, 0))])


# ---------------------------------------------------------------------------
# form


def test_form_trivial_cases(eta8):
    L = 8
    f = indicator(L, 0.3, 1)
    assert rank1_form(eta8, [], f, f, f) == 0.0
    assert rank1_form(eta8, None, f, Signal.zeros(L), f) == 0.0
    with pytest.raises(ValueError):
        rank1_form(eta8, [tile_at(L, 2, 0, 0)], f, f, f)


def test_form_single_tile_matched_packets(eta8):
    P = eta8.tiles(0)[7]
    fs = [wavelet(eta8.eta(P, j)) for j in range(3)]
    direct = float(P.space.length) * np.prod([transform_W(fs[j], eta8.eta(P, j)) for j in range(3)])
    assert rank1_form(eta8, [P], *fs) == pytest.approx(direct, rel=1e-12)
    assert direct > 0


@settings(max_examples=20)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_form_homogeneous_and_monotone(seed, c):
    L = 8
    eta = build_eta_from_gamma(GAMMA, 1, 2, 0, scale_tiles(L, 6))
    fs = [indicator(L, 0.3, seed + j) for j in range(3)]
    base = rank1_form(eta, None, *fs)
    scaled = rank1_form(eta, None, Signal(c * fs[0].samples), fs[1], fs[2])
    assert scaled == pytest.approx(c * base, rel=1e-9)
    Ws = [transform_W_all(f) for f in fs]
    bigger = transform_W_all(fs[1])
    for k in bigger.arrays:
        bigger.arrays[k] = bigger.arrays[k] + 0.01
    assert rank1_form(eta, None, Ws[0], bigger, Ws[2]) >= rank1_form(eta, None, *Ws)


# ---------------------------------------------------------------------------
# sparse ratio


def test_eps_vec():
    for eps in (0.5, 0.25, 0.03125):
        assert eps_vec((1 / (1 - eps), 2, 2)) == pytest.approx(eps)
    assert eps_vec((2, 2, 2)) == 0.5
    assert eps_vec((1, 2, 2)) == 0.0
    with pytest.raises(ValueError):
        eps_vec((0.5, 2, 2))


def test_sparse_ratio_errors(eta8):
    L = 8
    f = indicator(L, 0.3, 0)
    with pytest.raises(ValueError):
        rank1_sparse_ratio(eta8, (f, f, f), (1.0, 2.0, 2.0))
    with pytest.raises(ValueError):
        rank1_sparse_ratio(eta8, (Signal.zeros(L), f, f), (1.5, 2.0, 2.0))
    with pytest.raises(ValueError):
        rank1_sparse_ratio(eta8, (indicator(7, 0.3, 0),) * 3, (1.5, 2.0, 2.0))


def test_sparse_ratio_over_eps(eta8):
    L = 8
    fs = (indicator(L, 2.0**-3, 1), indicator(L, 0.25, 2), indicator(L, 0.25, 3))
    reps = [rank1_sparse_check(eta8, fs, (1 / (1 - 2.0**-j), 2, 2)) for j in range(1, 6)]
    ratios = [r.ratio for r in reps]
    assert 0 < max(ratios) < 1
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))
    for r in reps:
        assert r.tree_ratio <= 3.0
        assert r.collection.checks["disjoint"] and r.collection.checks["covers"]
        assert r.sparse_sum <= r.maximal_l1 * (1 + 1e-12) or r.p != (1 / (1 - r.eps), 2, 2)
    assert reps[0].form == pytest.approx(rank1_form(eta8, None, *fs), rel=1e-12)


# ---------------------------------------------------------------------------
# tree estimate


def test_tree_estimate_single_tile(eta8):
    P = eta8.tiles(0)[3]
    Fs = [TileFunction({P: v}) for v in (0.5, 2.0, 3.0)]
    lhs, rhs = tree_estimate_ratio(eta8, Fs, [P])
    assert lhs == pytest.approx(3.0) and rhs == pytest.approx(3.0)
    Fs[1] = TileFunction()
    assert tree_estimate_ratio(eta8, Fs, [P]) == (0.0, 0.0)
    assert tree_estimate_check(eta8, Fs, [P])


def test_tree_estimate_rejects_non_trees(eta8):
    base = eta8.tiles(0)
    far = [P for P in base if P.freq.pos >> 1 != base[0].freq.pos >> 1 and P.space == base[0].space]
    with pytest.raises(ValueError, match="1-tree"):
        tree_estimate_ratio(eta8, [TileFunction()] * 3, [base[0], far[0]])


def test_tree_estimate_lacunary_oracle_15_tiles():
    L = 10
    eta = build_eta_from_gamma(GAMMA, 1, 2, 0, scale_tiles(L, 6))
    rng = np.random.default_rng(4)
    Ws = [transform_W_all(indicator(L, 0.2, 30 + j)) for j in range(3)]
    T = []
    while len(T) < 15:
        T = random_one_tree(eta, rng, 15)
    for k in range(3):
        assert size_2_star_k(eta, Ws[k], k, T) == pytest.approx(size_2_star_k_bruteforce(eta, Ws[k], k, T), rel=1e-12)
    assert tree_estimate_check(eta, Ws, T, oracle=True)


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_tree_estimate_random_trees(seed):
    L = 8
    eta = build_eta_from_gamma(GAMMA, 1, 2, 0, scale_tiles(L, 6))
    rng = np.random.default_rng(seed)
    Ws = [transform_W_all(indicator(L, 0.3, seed + j)) for j in range(3)]
    T = random_one_tree(eta, rng, int(rng.integers(1, 12)))
    lhs, rhs = tree_estimate_ratio(eta, Ws, T)
    assert lhs <= 3.0 * rhs * (1 + 1e-12)


# ---------------------------------------------------------------------------
# continuous reference


def _rand(N, seed):
    rng = np.random.default_rng(seed)
    return Signal(rng.normal(size=N) + 1j * rng.normal(size=N))


def test_bht_zero_symbol_and_line_frequencies():
    N = 32
    f = _rand(N, 0)
    zero = lambda a, b, c: 0.0 * a
    assert np.all(bht_direct(f, f, zero, GAMMA).samples == 0)
    x = np.arange(N)
    e1 = Signal(np.exp(2j * np.pi * 3 * x / N))
    e2 = Signal(np.exp(2j * np.pi * -6 * x / N))  # (3, -6, 3)/N lies on the line
    assert np.abs(bht_direct(e1, e2, bht_symbol(GAMMA), GAMMA).samples).max() < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_bht_matches_space_side_sum(seed):
    N = 16
    f1, f2, f3 = (_rand(N, 3 * seed + j) for j in range(3))
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3)
    m = lambda a, b, d: 0.5 * np.cos(c[0] * a + c[1] * b + c[2] * d)
    direct = bht_pairing(f1, f2, f3, m, GAMMA, check=False)
    oracle = bht_space_oracle(f1, f2, f3, m, GAMMA)
    assert abs(direct - oracle) <= 1e-10 * max(1.0, abs(oracle))
    m = bht_symbol(GAMMA)
    assert bht_pairing(f1, f2, f3, m, GAMMA) == pytest.approx(bht_space_oracle(f1, f2, f3, m, GAMMA), rel=1e-10)


def test_bht_symbol_condition():
    assert check_symbol(bht_symbol(GAMMA), GAMMA, 32)["grad"] == 0.0
    with pytest.raises(ValueError):
        check_symbol(lambda a, b, c: 2.0 + 0 * a, GAMMA, 16)
    with pytest.raises(ValueError):
        bht_direct(_rand(16, 0), _rand(16, 1), lambda a, b, c: np.sin(37 * a), GAMMA)
