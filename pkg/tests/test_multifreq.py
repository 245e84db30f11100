import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tilebench.dyadic import DyadicGrid, tile_at
from tilebench.multifreq import (
    choice_K,
    cz_intervals,
    eta,
    gb_split,
    minimal_tiles,
    project,
    project_set,
    regions,
    smoothness_M,
    tile_count_bound,
)
from tilebench.selection import tiles_to_mask
from tilebench.signal import Signal
from tilebench.treespace import Top, in_tree
from tilebench.wavepackets import iter_standard_tiles, local_tile_norm


def rand_signal(L, seed):
    rng = np.random.default_rng(seed)
    n = 1 << L
    return Signal(rng.normal(size=n) + 1j * rng.normal(size=n))


def grid(L):
    return DyadicGrid(0, 0, L)


@st.composite
def source_families(draw, L=7):
    n = draw(st.integers(1, 6))
    out = []
    for _ in range(n):
        k = draw(st.integers(0, L))
        out.append(grid(L).interval(k, draw(st.integers(0, (1 << (L - k)) - 1))))
    return out


def test_eta_values():
    assert eta(np.array([0.0]))[0] == 1.0
    assert np.all(eta(np.array([-1.0, 1.0, 1.5, -3.0])) == 0)
    x = np.linspace(-0.99, 0.99, 101)
    assert np.all(eta(x) > 0) and np.all(eta(x) <= 1)


def test_cz_whole_torus_source():
    # a torus-length source admits exactly the intervals with 9 K^2 |G| < N
    L = 8
    fam = cz_intervals([grid(L).interval(L, 0)], 1.0, L)
    assert {G.scale for G in fam} == {L - 4}
    assert len(fam) == 16 and not fam.forced


def test_cz_forced_bottom_scale():
    L = 6
    fam = cz_intervals([grid(L).interval(0, 7)], 2.0, L)
    assert grid(L).interval(0, 7) in fam.forced
    assert fam.checks["violations_partition"] == 0


def test_cz_rejects_bad_input():
    with pytest.raises(ValueError):
        cz_intervals([], 2.0, 5)
    with pytest.raises(ValueError):
        cz_intervals([grid(5).interval(1, 0)], 0.5, 5)


@settings(max_examples=40)
@given(source_families(), st.floats(1.0, 4.0))
def test_cz_properties_hold(sources, K):
    fam = cz_intervals(sources, K, 7)  # raises on any structural violation
    assert fam.checks["overlap_3G"] <= 4


@pytest.mark.parametrize("seed", range(4))
def test_cz_mutual_control(seed):
    L = 8
    rng = np.random.default_rng(seed)
    srcs = [grid(L).interval(int(k), int(rng.integers(0, 1 << (L - k)))) for k in rng.integers(2, 6, 5)]
    h = Signal(rng.random(1 << L) ** 4 + 0j)
    fam = cz_intervals(srcs, 1.5, L, h=h)
    # sup_J inf_J Mh <~ sup_G inf_G Mh <~ K^2 sup_J inf_J Mh; observed upper constant below 1.5
    assert fam.checks["mutual_lower"] <= 1.0 + 1e-12
    assert fam.checks["mutual_upper"] <= 9.0


@pytest.mark.parametrize("seed", range(3))
def test_reconstruction_by_direct_summation(seed):
    L = 7
    rng = np.random.default_rng(seed)
    srcs = [grid(L).interval(int(k), int(rng.integers(0, 1 << (L - k)))) for k in rng.integers(0, 5, 4)]
    fam = cz_intervals(srcs, 1.3, L)
    f = rand_signal(L, seed)
    total = sum((project(f, P).samples for P in minimal_tiles(fam)), np.zeros(1 << L, complex))
    assert np.abs(total - f.samples).max() <= 1e-12


def test_projection_support_and_agreement():
    L = 7
    N = 1 << L
    f = rand_signal(L, 5)
    for k, m, l in [(0, 0, 9), (3, 5, 4), (5, 17, 2), (7, 3, 0)]:
        P = tile_at(L, k, m, l)
        a = project(f, P).samples
        assert np.allclose(a, project_set(f, [P]).samples, atol=1e-12)
        ell = 1 << k
        near = np.zeros(N, bool)
        near[np.mod(np.arange(l * ell - ell, l * ell + 2 * ell), N)] = True
        assert np.all(a[~near] == 0)


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_projection_linear_in_tile_set(seed):
    L = 6
    rng = np.random.default_rng(seed)
    fam = cz_intervals([grid(L).interval(int(rng.integers(0, 3)), int(rng.integers(0, 8)))], 1.2, L)
    tiles = minimal_tiles(fam)
    pick = rng.random(len(tiles)) < 0.5
    W1 = [P for P, s in zip(tiles, pick) if s]
    W2 = [P for P, s in zip(tiles, pick) if not s]
    f = rand_signal(L, seed)
    lhs = project_set(f, tiles).samples
    rhs = project_set(f, W1).samples + project_set(f, W2).samples
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_projection_resolution_mismatch():
    f = rand_signal(6, 0)
    with pytest.raises(ValueError):
        project(f, tile_at(5, 1, 0, 0))


def _tops(L, specs):
    return [Top(grid(L).interval(k, l), Fraction(xi)) for k, l, xi in specs]


@settings(max_examples=25)
@given(st.integers(0, 10**6), st.sampled_from([1.0, 2.0, 3.5]))
def test_regions_partition_and_count(seed, K):
    L = 7
    rng = np.random.default_rng(seed)
    srcs = [grid(L).interval(int(k), int(rng.integers(0, 1 << (L - k)))) for k in rng.integers(0, 4, 3)]
    fam = cz_intervals(srcs, K, L)
    tops = _tops(L, [(int(k), int(rng.integers(0, 1 << (L - k))), Fraction(int(rng.integers(0, 64)), 64))
                     for k in rng.integers(2, 5, 3)])
    reg = regions(fam, tops)
    for i in range(len(tops)):
        for G in fam:
            parts = reg.principal[G].astype(int) + reg.freq_tail[i][G] + reg.space_tail[i][G]
            assert np.all(parts == 1)
    assert tile_count_bound(fam, reg)[0]


def test_choice_of_parameters():
    assert smoothness_M(2.0) == 5120
    assert smoothness_M(3.0) == 10 * math.ceil(256 * 1.5)
    K = choice_K(2.0**40, 2.0, 2.0)
    assert K == pytest.approx(2.0 ** (40 * 0.5 * (10 / 5120 + 0.1)))
    assert choice_K(1.0, 1.5, 2.0) == 1.0


def _tree_setup(L=12):
    tops = _tops(L, [(5, 20, Fraction(5, 32) + Fraction(1, 128)), (5, 90, Fraction(3, 4) + Fraction(1, 128))])
    tiles = [P for P in iter_standard_tiles(L) if 1 <= P.space.scale <= 5 and any(in_tree(P, T, 1) for T in tops)]
    return tops, tiles


def test_gb_split_tail_decays_in_K():
    L = 12
    tops, tiles = _tree_setup(L)
    f = rand_signal(L, 1)
    mask = tiles_to_mask(L, tiles)
    f1 = local_tile_norm(f, tiles, 1.0)
    Ks = [2, 4, 8, 16]
    tails = []
    for K in Ks:
        g, b, rep = gb_split(f, tops, mask, 16, 1.5, 2.0, K=K)
        assert np.abs(g.samples + b.samples - f.samples).max() <= 1e-12
        assert rep["tile_count_ok"]
        tails.append(max(rep["tail_sizes"]) / f1)
    slope = np.polyfit(np.log(Ks), np.log(tails), 1)[0]
    assert slope <= -1.0


def test_gb_split_empty_collection():
    L = 6
    f = rand_signal(L, 0)
    g, b, rep = gb_split(f, _tops(L, [(2, 0, 0)]), [], 4, 1.5, 2.0)
    assert np.all(g.samples == 0) and b is f
    with pytest.raises(ValueError):
        gb_split(f, [], [], 0.5, 1.5, 2.0)
