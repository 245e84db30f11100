"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines appear in
the output even when capture is on.
"""
import json
import math
import random
import time
from importlib import resources

import numpy as np
import pytest

from tilebench import dyadic
from tilebench.cli import default_tops, make_signal, rank1_map, rank1_sweep, sparse_sweep, tree_tiles
from tilebench.dyadic import DyadicGrid
from tilebench.multifreq import cz_intervals, gb_split, minimal_tiles, project_set
from tilebench.rank1 import tree_estimate_check
from tilebench.selection import full_mask, tiles_to_mask
from tilebench.signal import HALF_LINE, Signal, carleson_max, lp_norm, weak_lorentz_norm
from tilebench.sparsedom import embedding_curve, embedding_ratios, stopping_collection
from tilebench.treespace import OuterSpace, Size, Top, Tree, in_tree, outer_lorentz_norm, outer_measure, structure_violations
from tilebench.wavepackets import TileFunction, iter_standard_tiles, local_tile_norm, transform_W_all

BASELINES = json.loads(resources.files("tilebench").joinpath("data/baselines.json").read_text())
EPS_GRID = [2.0**-j for j in range(1, 6)]


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail

    return emit


def test_01_reconstruction(verdict):
    L = 12
    g = DyadicGrid(0, 0, L)
    rng = np.random.default_rng(2026)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        srcs = [g.interval(int(k), int(rng.integers(0, 1 << (L - k)))) for k in rng.integers(0, 9, 6)]
        fam = cz_intervals(srcs, float(rng.uniform(1.0, 4.0)), L)
        f = Signal(rng.normal(size=1 << L) + 1j * rng.normal(size=1 << L))
        r = project_set(f, minimal_tiles(fam)).samples
        worst = max(worst, float(np.linalg.norm(f.samples - r) / np.linalg.norm(f.samples)))
    dt = time.perf_counter() - t0
    verdict(1, worst <= 1e-6 and dt < 10, f"max relative error {worst:.2e} (<= 1e-6), {dt:.2f} s (< 10 s)")


def test_02_grid_and_tree_invariants(verdict):
    grid_bad = sum(dyadic.grid_violations(DyadicGrid(s, 0, 7))[1] for s in (0, 1, 2))
    L = 5
    J = DyadicGrid(0, 0, L).interval(L, 0)
    rng = random.Random(7)
    bad, checked = [], 0
    for kappa in (1, 2, 3):
        space = OuterSpace(J, kappa)
        tiles, tops = space.local_tiles(), space.tops()
        n = 0
        while n < 500:
            top = rng.choice(tops)
            members = [P for P in tiles if in_tree(P, top, kappa)]
            if not members:
                continue
            T = Tree(top, rng.sample(members, rng.randint(1, min(40, len(members)))), kappa)
            bad += structure_violations(T)
            n += 1
        checked += n
    verdict(2, grid_bad == 0 and not bad,
            f"grid pairs violating nesting: {grid_bad}; tree violations: {len(bad)} over {checked} trees (kappa 1,2,3)")


def test_03_outer_holder(verdict):
    L = 4
    J = DyadicGrid(0, 0, L).interval(L, 0)
    universe = [P for P in iter_standard_tiles(L) if P.space.scale >= 1]
    assert len(universe) == 64
    rng = random.Random(3)
    exps = [1.0, 1.5, 2.0, 3.0, 4.0, math.inf]
    fails, worst, finite = 0, 0.0, 0
    for trial in range(500):
        m = 2 + trial % 2
        space = OuterSpace(J, 1 + trial % 3)
        S = rng.sample(universe, rng.randint(1, 12))
        Fs = [TileFunction({P: rng.random() for P in S if rng.random() > 0.1}) for _ in range(m)]
        prod = TileFunction({P: math.prod(F.get(P, 0.0) for F in Fs) for P in S})
        p_j = [rng.choice(exps) for _ in range(m)]
        # L^{inf,q} with q < inf holds only zero, which would make the trial vacuous
        q_j = [math.inf if pj == math.inf else rng.choice([1.0, 2.0, math.inf]) for pj in p_j]
        r_j = [rng.choice([m, 2 * m, math.inf]) for _ in range(m)]
        inv = lambda xs: 1 / sum(1 / x for x in xs) if any(x < math.inf for x in xs) else math.inf
        p, q, r = inv(p_j), inv(q_j), inv(r_j)
        lhs = outer_lorentz_norm(prod, space, Size("p", r), p, q)
        rhs = math.prod(outer_lorentz_norm(F, space, Size("p", rj), pj, qj)
                        for F, rj, pj, qj in zip(Fs, r_j, p_j, q_j))
        const = m ** (1 / p) if p < math.inf else 1.0
        if lhs > const * rhs * (1 + 1e-12) + 1e-15:
            fails += 1
        if 0 < rhs < math.inf:
            finite += 1
            worst = max(worst, lhs / (const * rhs))
    verdict(3, fails == 0, f"{fails} violations in 500 trials ({finite} with finite nonzero rhs), "
                           f"largest lhs/(m^(1/p) rhs) = {worst:.3f}")


def test_04_outer_measure_greedy(verdict):
    L = 4
    J = DyadicGrid(0, 0, L).interval(L, 0)
    spaces = {k: OuterSpace(J, k) for k in (1, 2, 3)}
    tiles = spaces[1].local_tiles()
    rng = random.Random(4)
    below, ratio = 0, 1.0
    for i in range(200):
        space = spaces[1 + i % 3]
        A = rng.sample(tiles, rng.randint(1, 10))
        exact, greedy = outer_measure(A, space), outer_measure(A, space, "greedy")
        below += greedy < exact - 1e-12
        ratio = max(ratio, greedy / exact)
    verdict(4, below == 0 and ratio <= 4, f"greedy < exact in {below} of 200 sets; max greedy/exact = {ratio:.3f} (<= 4)")


C0 = 2.0  # recorded constant for R(p)(p-1)


def test_05_carleson_weak_growth(verdict):
    L = 12
    ps = np.array([1.1, 1.2, 1.4, 1.7, 2.0])
    t0 = time.perf_counter()
    worst, slopes = 0.0, []
    for d in range(3, 9):
        for seed in (7, 8):
            f = make_signal(L, "indicator", seed + 100 * d, 2.0**-d)
            Cf, _ = carleson_max(f, HALF_LINE)
            R = np.array([weak_lorentz_norm(Cf, p) / lp_norm(np.abs(f.samples), p) for p in ps])
            worst = max(worst, float((R * (ps - 1)).max()))
            slopes.append(float(np.polyfit(np.log(1 / (ps - 1)), np.log(R), 1)[0]))
    dt = time.perf_counter() - t0
    ok = worst <= C0 and max(slopes) <= 1.15 and dt <= 300
    verdict(5, ok, f"max R(p)(p-1) = {worst:.4f} (C0 = {C0}), max slope = {max(slopes):.4f} (<= 1.15), "
                   f"{len(slopes)} sets, {dt:.1f} s")


def test_06_sparse_bound(verdict):
    cfg = BASELINES["sparse"]
    worst = 0.0
    for seed in cfg["seeds"]:
        f1 = make_signal(cfg["L"], cfg["family"], 2 * seed, cfg["densities"][0])
        f2 = make_signal(cfg["L"], cfg["family"], 2 * seed + 1, cfg["densities"][1])
        worst = max(worst, max(r["ratio"] for r in sparse_sweep(f1, f2, EPS_GRID)))
    rel = worst / cfg["C1"]
    verdict(6, 0 < worst < math.inf and 0.5 <= rel <= 2.0,
            f"C1 = {worst:.4g} over {len(cfg['seeds'])} seeds x 5 eps; baseline {cfg['C1']:.4g}, ratio {rel:.3f}")


def _random_one_tree(eta, rng, size):
    L = eta.L
    base = eta.tiles(0)
    Q = base[int(rng.integers(len(base)))]
    s_top = int(rng.integers(Q.space.scale, L + 1))
    top = Top(DyadicGrid(0, 0, L).interval(s_top, Q.space.pos >> (s_top - Q.space.scale)), Q.freq.left)
    members = [P for P in base if in_tree(P, top, 1)]
    return [members[i] for i in rng.permutation(len(members))[:size]]


def test_07_rank1_sparse_bound(verdict):
    cfg = BASELINES["rank1"]
    eta = rank1_map(cfg)
    worst = 0.0
    for seed in cfg["seeds"]:
        run = dict(cfg, epsilon_grid=EPS_GRID,
                   signals=[{"seed": 3 * seed + j, "density": d} for j, d in enumerate(cfg["densities"])])
        worst = max(worst, max(r["ratio"] for r in rank1_sweep(run, eta)))
    rel = worst / cfg["C"]
    rng = np.random.default_rng(77)
    Ws = [transform_W_all(make_signal(cfg["L"], "indicator", 500 + j, 0.3)) for j in range(3)]
    tree_fail = sum(not tree_estimate_check(eta, Ws, _random_one_tree(eta, rng, int(rng.integers(1, 40))), C=3.0)
                    for _ in range(200))
    verdict(7, 0 < worst < math.inf and 0.5 <= rel <= 2.0 and tree_fail == 0,
            f"C = {worst:.4g}, baseline {cfg['C']:.4g}, ratio {rel:.3f}; tree estimate (C=3) failed on {tree_fail}/200")


def test_08_tail_decay(verdict):
    L = 12
    Ks = [2, 4, 8, 16]
    tops = default_tops(L)
    tiles = tree_tiles(L, tops)
    mask = tiles_to_mask(L, tiles)
    slopes, recon = [], 0.0
    for seed in range(3):
        f = make_signal(L, "random-phase", seed, 0.0)
        f1 = local_tile_norm(f, tiles, 1.0)
        tails = []
        for K in Ks:
            g, b, rep = gb_split(f, tops, mask, 16, 1.5, 2.0, K=K)
            recon = max(recon, float(np.abs(g.samples + b.samples - f.samples).max()))
            tails.append(max(rep["tail_sizes"]) / f1)
        slopes.append(float(np.polyfit(np.log(Ks), np.log(tails), 1)[0]))
    verdict(8, max(slopes) <= -1 and recon <= 1e-12,
            f"tail slopes {', '.join(f'{s:.2f}' for s in slopes)} (<= -1); max |g+b-f| = {recon:.1e}")


def test_09_embedding_flatness(verdict):
    L = 8
    ps = (1.05, 1.1, 1.2, 1.5, 2.0)
    mask = full_mask(L)
    for k in range(2):
        mask[k][:] = False
    spreads, w2 = [], []
    for family, seed in (("indicator", 1), ("indicator", 2), ("random-phase", 3)):
        f = make_signal(L, family, seed, 2.0**-4)
        W = transform_W_all(f)
        r = embedding_curve(f, ps, mask, t=2.0, F=W)
        spreads.append(max(r) / min(r))
        w2.append(embedding_ratios(f, mask, kind="W2", F=W))
    verdict(9, max(spreads) <= 2.0 and min(spreads) >= 1.0,
            f"Wp max/min over p: {', '.join(f'{s:.3f}' for s in spreads)} (<= 2); "
            f"W2 ratio (p-independent): {', '.join(f'{v:.3f}' for v in w2)}")


def test_10_stopping_construction(verdict):
    L = 10
    packing, theta, nodes, bad = 0.0, 0.0, 0, []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        f1 = make_signal(L, "indicator", 1000 + seed, 2.0 ** -int(rng.integers(1, 9)))
        f2 = make_signal(L, "indicator", 2000 + seed, 2.0 ** -int(rng.integers(1, 4)))
        col = stopping_collection(f1, f2, eps=EPS_GRID[seed % 5])
        c = col.checks
        if not (c["disjoint"] and c["covers"] and c["min_E_ratio"] >= 0.5 and c["packing"] <= 0.25):
            bad.append(seed)
        packing, theta, nodes = max(packing, c["packing"]), max(theta, col.theta), max(nodes, len(col))
    verdict(10, not bad, f"{len(bad)} failing runs of 50; packing constant {packing:.3f} (<= 1/4), "
                         f"max Theta {theta:g}, up to {nodes} nodes")
