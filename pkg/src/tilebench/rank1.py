"""Rank-1 trilinear tile forms and their sparse checks.

A rank-1 map sends each tile ``P`` of a base set to a triple of tiles with the
same spatial interval.  The standard example comes from a non-degenerate line
``span(gamma)`` inside ``{xi_1 + xi_2 + xi_3 = 0}``: every frequency interval
``omega`` is paired with cubes ``omega x Q_2 x Q_3`` meeting that plane at a
controlled distance from the line.

Frequencies of the standard tiling are read as signed values in ``[-1/2, 1/2)``.
In units of the common side ``2^-s`` a cube is the integer box
``[A_1, A_1 + 1] x [A_2, A_2 + 1] x [A_3, A_3 + 1]`` and all geometric tests are
scale free.

Tiles are handled as integer triples ``(s, m, l)``: spatial scale, frequency
band and position.  The order checks r1 to r4 run on pairwise relation
matrices built from these integers.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dyadic import DyadicGrid, DyadicInterval, Tile, parent_clamped, tile_at
from .signal import Signal, maximal_function
from .sparsedom import (
    _arrays,
    _avg,
    _owner_masks,
    _triple,
    SparseCollection,
    sparse_maximal,
    stopping_collection_q,
)
from .treespace import Top, Tree, in_tree, is_lacunary, size_2_star
from .wavepackets import DEFAULT_SPEC, TileField, TileFunction, WaveletSpec, scale_inf, tile_index, transform_W_all

__all__ = [
    "DEFAULT_KAPPA",
    "UniquenessError",
    "GammaFamily",
    "Rank1Map",
    "box_line_distance",
    "gamma_family",
    "build_eta_from_gamma",
    "leq_matrix",
    "eps_vec",
    "rank1_form",
    "Rank1Report",
    "rank1_sparse_check",
    "rank1_sparse_ratio",
    "rank1_tree_ratio",
    "size_2_star_k",
    "size_2_star_k_bruteforce",
    "tree_estimate_ratio",
    "tree_estimate_check",
    "one_trees",
    "split_checks",
    "order_checks",
    "bht_symbol",
    "check_symbol",
    "bht_direct",
    "bht_pairing",
    "bht_space_oracle",
]

DEFAULT_KAPPA = 10


class UniquenessError(ValueError):
    """Some ``omega`` carries more than one admissible cube."""


# ---------------------------------------------------------------------------
# geometry


def _unit_gamma(gamma: Sequence[float]) -> np.ndarray:
    g = np.asarray(gamma, dtype=float)
    if g.shape != (3,) or not np.all(np.isfinite(g)):
        raise ValueError("gamma must be three finite numbers")
    if np.any(g == 0):
        raise ValueError("degenerate gamma: every coordinate must be nonzero")
    if abs(g.sum()) > 1e-9 * np.abs(g).sum():
        raise ValueError("gamma must lie in the plane xi_1 + xi_2 + xi_3 = 0")
    return g / np.linalg.norm(g)


def box_line_distance(lo: np.ndarray, gamma: Sequence[float], side: float = 1.0) -> np.ndarray:
    """Distance from the boxes ``lo + [0, side]^3`` (rows of ``lo``) to ``span(gamma)``.

    The squared distance to ``t gamma`` is convex and piecewise quadratic in
    ``t``; its minimum sits at a breakpoint or at the stationary point of a piece.
    """
    g = np.asarray(gamma, float)
    lo = np.atleast_2d(np.asarray(lo, float))
    hi = lo + side
    bps = np.sort(np.concatenate([lo / g, hi / g], axis=1), axis=1)
    edges = np.concatenate([bps[:, :1] - 1.0, bps, bps[:, -1:] + 1.0], axis=1)
    cands = [bps]
    for i in range(7):
        a, b = edges[:, i], edges[:, i + 1]
        mid = (a + b) / 2
        x = mid[:, None] * g
        below, above = x < lo, x > hi
        c = np.where(below, lo, np.where(above, hi, 0.0))
        act = below | above
        den = (act * g**2).sum(axis=1)
        num = (act * g * c).sum(axis=1)
        t = np.where(den > 0, num / np.where(den > 0, den, 1.0), mid)
        lo_t = np.where(i == 0, -np.inf, a)
        hi_t = np.where(i == 6, np.inf, b)
        cands.append(np.clip(t, lo_t, hi_t)[:, None])
    T = np.concatenate(cands, axis=1)
    X = T[:, :, None] * g
    d = np.maximum(np.maximum(lo[:, None, :] - X, X - hi[:, None, :]), 0.0)
    return np.sqrt((d**2).sum(axis=2).min(axis=1))


def _signed(m: np.ndarray | int, s: int):
    n = 1 << s
    return np.where(m < n >> 1, m, m - n) if isinstance(m, np.ndarray) else (m if m < n >> 1 else m - n)


def _candidates(A1: int, s: int, g: np.ndarray, K: float) -> list[tuple[float, int, int]]:
    """Admissible ``(dist, A_2, A_3)`` for a first side at signed band ``A1``, sorted."""
    half = 1 << (s - 1)
    R = K * K
    t = np.array([(A1 - R) / g[0], (A1 + 1 + R) / g[0]])
    a2 = t * g[1]
    lo2 = max(-half, math.floor(a2.min() - R - 1))
    hi2 = min(half - 1, math.ceil(a2.max() + R + 1))
    if lo2 > hi2:
        return []
    A2 = np.repeat(np.arange(lo2, hi2 + 1), 3)
    A3 = -A1 - A2 - np.tile([2, 1, 0], hi2 - lo2 + 1)
    ok = (A3 >= -half) & (A3 < half)
    A2, A3 = A2[ok], A3[ok]
    if A2.size == 0:
        return []
    lo = np.stack([np.full(A2.size, A1), A2, A3], axis=1)
    d = box_line_distance(lo, g)
    keep = (d >= K - 1e-12) & (d <= R + 1e-12)
    out = sorted(zip(d[keep].tolist(), A2[keep].tolist(), A3[keep].tolist()))
    return [(float(a), int(b), int(c)) for a, b, c in out]


@dataclass
class GammaFamily:
    """Cubes ``omega x Q_2(omega) x Q_3(omega)`` per frequency scale.

    ``cubes[s][m1] = (m2, m3)`` in band indices of scale ``s`` (side ``2^-s``).
    ``admissible[s][m1]`` counts every cube passing g1 to g3 for that side.
    """

    gamma: tuple
    H: int
    K: float
    h: int
    kappa: int
    cubes: dict
    admissible: dict
    select: str

    def Q(self, s: int, m1: int) -> tuple[int, int] | None:
        return self.cubes.get(s, {}).get(m1)

    def __len__(self) -> int:
        return sum(len(c) for c in self.cubes.values())

    def checks(self) -> dict:
        """Re-verify g1 to g3 and uniqueness on the stored cubes."""
        g = np.asarray(self.gamma)
        worst = [math.inf, 0.0]
        g1 = g2 = True
        for s, cs in self.cubes.items():
            g1 &= (-s) % self.H == self.h
            for m1, (m2, m3) in cs.items():
                A = [_signed(m, s) for m in (m1, m2, m3)]
                g2 &= sum(A) <= 0 < sum(A) + 3
                d = float(box_line_distance(np.array([A]), g)[0])
                worst = [min(worst[0], d), max(worst[1], d)]
        inj = all(len({c[i] for c in cs.values()}) == len(cs) for cs in self.cubes.values() for i in (0, 1))
        return {"g1": bool(g1), "g2": bool(g2), "dist_min": worst[0], "dist_max": worst[1],
                "g3": bool(not len(self) or (worst[0] >= self.K - 1e-12 and worst[1] <= self.K**2 + 1e-12)),
                "injective": inj}


def _compatible(cube: tuple, par: list, kd: int) -> bool:
    """Pairwise r3/r4 condition against already chosen cubes sharing a 1-parent."""
    seen = set()
    for j in range(3):
        for other in par[j].get(cube[j] >> 1, ()):
            if other in seen:
                continue
            seen.add(other)
            sib = [(cube[i] >> 1) == (other[i] >> 1) for i in range(3)]
            if sum(sib) > 1:
                return False
            if any((cube[i] >> kd) != (other[i] >> kd) for i in range(3)):
                return False
    return True


def gamma_family(gamma: Sequence[float], H: int, K: float, h: int, bands: Mapping[int, Iterable[int]],
                 kappa: int = DEFAULT_KAPPA, select: str = "greedy") -> GammaFamily:
    """Cubes for the bands ``bands[s]`` at every frequency scale ``s``.

    ``select="all"`` keeps every admissible cube and raises
    :class:`UniquenessError` when some ``omega`` has two.  ``select="greedy"``
    keeps at most one cube per ``omega``: the closest admissible one to the line
    that keeps second and third sides injective and passes the pairwise
    r3/r4 test against the cubes already chosen.
    """
    g = _unit_gamma(gamma)
    if H < 1 or not 0 <= h < H:
        raise ValueError("need H >= 1 and 0 <= h < H")
    if K < 1:
        raise ValueError("need K >= 1")
    if select not in ("greedy", "all"):
        raise ValueError("select must be 'greedy' or 'all'")
    cubes, adm = {}, {}
    multi = []
    for s in sorted(bands):
        if s < 1 or (-s) % H != h:
            continue
        cs, counts = {}, {}
        used2, used3 = set(), set()
        par = [defaultdict(list) for _ in range(3)]
        kd = min(kappa, s)
        for m1 in sorted(set(bands[s])):
            cands = _candidates(_signed(m1, s), s, g, K)
            counts[m1] = len(cands)
            n = 1 << s
            if select == "all":
                if len(cands) > 1:
                    multi.append((s, m1, len(cands)))
                if cands:
                    cs[m1] = (cands[0][1] % n, cands[0][2] % n)
                continue
            for _, A2, A3 in cands:
                m2, m3 = A2 % n, A3 % n
                cube = (m1, m2, m3)
                if m2 in used2 or m3 in used3 or not _compatible(cube, par, kd):
                    continue
                cs[m1] = (m2, m3)
                used2.add(m2)
                used3.add(m3)
                for j in range(3):
                    par[j][cube[j] >> 1].append(cube)
                break
        cubes[s], adm[s] = cs, counts
    if multi:
        s, m1, c = max(multi, key=lambda r: r[2])
        raise UniquenessError(f"(H, K) = ({H}, {K:g}): {len(multi)} bands carry several admissible cubes, "
                              f"e.g. scale {s} band {m1} carries {c}")
    return GammaFamily(tuple(g.tolist()), H, float(K), h, kappa, cubes, adm, select)


# ---------------------------------------------------------------------------
# order relations on integer tiles


def leq_matrix(A: np.ndarray, B: np.ndarray, kappa: int) -> np.ndarray:
    """``M[i, j] = A_i <=_kappa B_j`` for integer tiles ``(s, m, l)`` of one standard tiling."""
    sA, mA, lA = (A[:, i][:, None] for i in range(3))
    sB, mB, lB = (B[:, i][None, :] for i in range(3))
    ds = sB - sA
    space = (ds >= 0) & ((lA >> np.maximum(ds, 0)) == lB)
    dA, dB = np.minimum(kappa, sA), np.minimum(kappa, sB)
    pA, pB = mA >> dA, mB >> dB
    gap = (sB - dB) - (sA - dA)
    freq = (gap >= 0) & ((pB >> np.maximum(gap, 0)) == pA)
    return space & freq


@dataclass
class Rank1Map:
    """``eta = (eta_1, eta_2, eta_3)`` on a base tile set; ``eta_1`` is the identity.

    ``comp[j]`` holds integer tiles ``(s, m, l)``, row ``i`` being ``eta_j`` of
    the ``i``-th base tile.  Construction runs the exhaustive r1 to r4 checks.
    """

    L: int | None
    comp: np.ndarray
    kappa: int = DEFAULT_KAPPA
    family: GammaFamily | None = None
    dropped: int = 0
    checks: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.comp = np.asarray(self.comp, dtype=np.int64).reshape(3, -1, 3)
        if self.kappa < 1:
            raise ValueError("kappa must be positive")
        self._index = {tuple(r): i for i, r in enumerate(self.comp[0].tolist())}
        self.checks = order_checks(self.comp, self.kappa)
        bad = [k for k in ("r1", "r2", "r3", "r4") if not self.checks[k]]
        if bad:
            raise ValueError(f"map violates {', '.join(bad)}: {self.checks['first_violation']}")

    def __len__(self) -> int:
        return self.comp.shape[1]

    @classmethod
    def from_tiles(cls, triples: Sequence[tuple[Tile, Tile, Tile]], kappa: int = DEFAULT_KAPPA) -> "Rank1Map":
        if not triples:
            return cls(None, np.zeros((3, 0, 3)), kappa)
        L = tile_index(triples[0][0])[0]
        rows = []
        for tr in triples:
            rows.append([tile_index(P)[1:] for P in tr])
            if any(tile_index(P)[0] != L for P in tr):
                raise ValueError("tiles from different tilings")
        comp = np.array(rows, dtype=np.int64).transpose(1, 0, 2)
        return cls(L, comp, kappa)

    def tiles(self, j: int = 0) -> list[Tile]:
        return [tile_at(self.L, s, m, l) for s, m, l in self.comp[j].tolist()]

    def index(self, P: Tile) -> int:
        key = tuple(tile_index(P)[1:])
        if key not in self._index:
            raise KeyError(f"tile {P} is not in the base set")
        return self._index[key]

    def eta(self, P: Tile, j: int) -> Tile:
        s, m, l = self.comp[j, self.index(P)].tolist()
        return tile_at(self.L, s, m, l)

    def subset_rows(self, Q_subset) -> np.ndarray:
        """Row indices of ``Q_subset`` (tiles, or ``None`` for everything); error if not a subset."""
        if Q_subset is None:
            return np.arange(len(self))
        rows = []
        for P in Q_subset:
            key = tuple(tile_index(P)[1:]) if isinstance(P, Tile) else tuple(P)
            if key not in self._index:
                raise ValueError(f"tile {P} is not in the base set")
            rows.append(self._index[key])
        return np.array(sorted(set(rows)), dtype=np.int64)


def order_checks(comp: np.ndarray, kappa: int, block: int = 512) -> dict:
    """Exhaustive r1 to r4 over all pairs; r3 is read with ``eta_k(P')`` on the right."""
    n = comp.shape[1]
    out = {"r1": True, "r2": True, "r3": True, "r4": True, "pairs_related": 0, "first_violation": ""}
    if n == 0:
        return out
    for j in range(3):
        if len({tuple(r) for r in comp[j].tolist()}) != n:
            out["r1"] = False
            out["first_violation"] = out["first_violation"] or f"eta_{j + 1} not injective"
        if not np.array_equal(comp[j][:, [0, 2]], comp[0][:, [0, 2]]):
            out["r2"] = False
            out["first_violation"] = out["first_violation"] or f"eta_{j + 1} moves a spatial interval"
    for a in range(0, n, block):
        rows = slice(a, min(n, a + block))
        one = [leq_matrix(comp[j][rows], comp[j], 1) for j in range(3)]
        kap = [leq_matrix(comp[j][rows], comp[j], kappa) for j in range(3)]
        trig = one[0] | one[1] | one[2]
        off = np.ones_like(trig)
        idx = np.arange(rows.start, rows.stop)
        off[idx - a, idx] = False
        trig &= off
        out["pairs_related"] += int(trig.sum())
        allk = kap[0] & kap[1] & kap[2]
        prime = sum((kap[k] & ~one[k]).astype(int) for k in range(3))
        v3 = trig & ~allk
        v4 = trig & (prime < 2)
        for name, v in (("r3", v3), ("r4", v4)):
            if v.any():
                out[name] = False
                i, j = np.argwhere(v)[0]
                out["first_violation"] = out["first_violation"] or f"{name} at rows ({a + i}, {j})"
    return out


def build_eta_from_gamma(gamma: Sequence[float], H: int, K: float, h: int, P_set: Iterable[Tile],
                         kappa: int = DEFAULT_KAPPA, select: str = "greedy") -> Rank1Map:
    """``eta(P) = (P, I_P x Q_2(omega_P), I_P x Q_3(omega_P))`` on the admissible part of ``P_set``.

    Tiles are kept when their scale satisfies g1, lies in the separated scale
    class of the largest such scale (spacing ``5 kappa``) and their ``omega``
    received a cube.  The rest are counted in ``dropped``.
    """
    g = _unit_gamma(gamma)
    tiles = list(P_set)
    if not tiles:
        gamma_family(g, H, K, h, {}, kappa, select)
        return Rank1Map(None, np.zeros((3, 0, 3)), kappa, None, 0)
    idx = np.array([tile_index(P) for P in tiles], dtype=np.int64)
    L = int(idx[0, 0])
    if np.any(idx[:, 0] != L):
        raise ValueError("P_set mixes tilings")
    idx = np.unique(idx[:, 1:], axis=0)
    ok_scale = (idx[:, 0] >= 1) & ((-idx[:, 0]) % H == h)
    if ok_scale.any():
        top = int(idx[ok_scale, 0].max())
        ok_scale &= (top - idx[:, 0]) % (5 * kappa) == 0
    bands = defaultdict(set)
    for s, m, _ in idx[ok_scale].tolist():
        bands[s].add(m)
    fam = gamma_family(g, H, K, h, bands, kappa, select)
    rows = [[], [], []]
    for s, m, l in idx[ok_scale].tolist():
        Q = fam.Q(s, m)
        if Q is None:
            continue
        rows[0].append((s, m, l))
        rows[1].append((s, Q[0], l))
        rows[2].append((s, Q[1], l))
    comp = np.array(rows, dtype=np.int64).reshape(3, -1, 3)
    return Rank1Map(L, comp, kappa, fam, len(idx) - comp.shape[1])


# ---------------------------------------------------------------------------
# the form


def _values(F: TileField, rows: np.ndarray) -> np.ndarray:
    out = np.zeros(len(rows))
    for s in np.unique(rows[:, 0]):
        sel = rows[:, 0] == s
        out[sel] = F.arrays[int(s)][rows[sel, 1], rows[sel, 2]]
    return out


def _fields(fs: Sequence, spec: WaveletSpec) -> list[TileField]:
    return [f if isinstance(f, TileField) else transform_W_all(f, spec) for f in fs]


def rank1_form(eta: Rank1Map, Q_subset, f1, f2, f3, spec: WaveletSpec = DEFAULT_SPEC) -> float:
    """``sum_{P in Q} |I_P| prod_j W[f_j](eta_j(P))``; ``f_j`` may be signals or precomputed fields."""
    rows = eta.subset_rows(Q_subset)
    if rows.size == 0:
        return 0.0
    Ws = _fields((f1, f2, f3), spec)
    prod = np.ones(rows.size)
    for j in range(3):
        prod *= _values(Ws[j], eta.comp[j][rows])
    return float((prod * np.exp2(eta.comp[0][rows, 0])).sum())


def eps_vec(p: Sequence[float]) -> float:
    """``2 - sum_j 1/min(p_j, 2)`` over the three exponents."""
    p = tuple(float(x) for x in p)
    if len(p) != 3 or any(x < 1 for x in p):
        raise ValueError("need three exponents, each at least 1")
    return 2.0 - sum(1.0 / min(x, 2.0) for x in p)


# ---------------------------------------------------------------------------
# tree estimate


def _as_values(eta: Rank1Map, F, j: int, rows: np.ndarray) -> np.ndarray:
    """Values of ``F_j`` on the base rows: a field is read at ``eta_j(P)``, a mapping at ``P``."""
    if isinstance(F, TileField):
        return _values(F, eta.comp[j][rows])
    tiles = [tile_at(eta.L, s, m, l) for s, m, l in eta.comp[0][rows].tolist()]
    return np.array([abs(float(F.get(P, 0.0))) for P in tiles])


def _one_tree_top(eta: Rank1Map, rows: np.ndarray, T) -> tuple[int, int]:
    """``(scale, pos)`` of the top interval; raises unless the rows form a 1-tree."""
    base = eta.comp[0][rows]
    if isinstance(T, Tree):
        if T.kappa != 1:
            raise ValueError("T must be a 1-tree")
        _, k, l = tile_index_interval(T.top.interval)
        return k, l
    s_top = int(base[:, 0].max())
    while True:
        tops = base[:, 2] >> (s_top - base[:, 0])
        if np.all(tops == tops[0]):
            break
        s_top += 1
        if s_top > eta.L:
            raise ValueError("T is not a 1-tree: no common spatial interval")
    d = np.minimum(1, base[:, 0])
    par_scale = base[:, 0] - d
    par = base[:, 1] >> d
    i = int(np.argmax(par_scale))
    fine_s, fine = int(par_scale[i]), int(par[i])
    if not np.all((fine >> (fine_s - par_scale)) == par):
        raise ValueError("T is not a 1-tree: the frequency parents have no common point")
    return s_top, int(tops[0])


def tile_index_interval(I: DyadicInterval) -> tuple[int, int, int]:
    g = I.grid
    if g.shift or g.k_min != 0:
        raise ValueError("interval is not on the standard spatial grid")
    return g.k_max, I.scale, I.pos


def _rows_of(eta: Rank1Map, T) -> np.ndarray:
    members = T.members if isinstance(T, Tree) else T
    rows = eta.subset_rows(list(members))
    if rows.size == 0:
        raise ValueError("T is empty")
    return rows


def _lacunary_kappa_tree(ints: np.ndarray, kappa: int) -> bool:
    if len({(s, m) for s, m, _ in ints.tolist()}) > 1:
        fam = sorted({(s, m) for s, m, _ in ints.tolist()})
        for (s1, m1), (s2, m2) in itertools.combinations(fam, 2):
            a, b = ((s1, m1), (s2, m2)) if s1 <= s2 else ((s2, m2), (s1, m1))
            if (b[1] >> (b[0] - a[0])) == a[1]:
                return False
    d = np.minimum(kappa, ints[:, 0])
    ps, pm = ints[:, 0] - d, ints[:, 1] >> d
    i = int(np.argmax(ps))
    return bool(np.all((pm[i] >> (ps[i] - ps)) == pm))


def size_2_star_k_bruteforce(eta: Rank1Map, F, k: int, T) -> float:
    """Oracle: every subset ``U`` of ``eta_k(T)`` that is a lacunary ``kappa``-tree, normalized by its hull."""
    rows = _rows_of(eta, T)
    if rows.size > 15:
        raise ValueError("enumeration limited to 15 tiles")
    img = eta.comp[k][rows]
    vals = _as_values(eta, F, k, rows)
    best = 0.0
    for r in range(1, rows.size + 1):
        for U in itertools.combinations(range(rows.size), r):
            U = list(U)
            sub = img[U]
            if not _lacunary_kappa_tree(sub, eta.kappa):
                continue
            s_top = int(sub[:, 0].max())
            while len(set((sub[:, 2] >> (s_top - sub[:, 0])).tolist())) > 1:
                s_top += 1
            tot = float((vals[U] ** 2 * np.exp2(sub[:, 0])).sum())
            best = max(best, tot / 2.0**s_top)
    return math.sqrt(best)


def size_2_star_k(eta: Rank1Map, F, k: int, T) -> float:
    """``sup`` over lacunary ``kappa``-trees ``U`` inside ``eta_k(T)`` of ``size_2``.

    Every such ``U`` sits inside ``V_xi = {R : xi in omega_R^p(kappa)}`` for
    ``xi`` a left endpoint of some ``kappa``-parent; each ``V_xi`` is handed to
    :func:`tilebench.treespace.size_2_star`.
    """
    rows = _rows_of(eta, T)
    img = [tile_at(eta.L, s, m, l) for s, m, l in eta.comp[k][rows].tolist()]
    vals = _as_values(eta, F, k, rows)
    G = TileFunction({P: float(v) for P, v in zip(img, vals)})
    sg = DyadicGrid(0, 0, eta.L)
    best = 0.0
    for xi in sorted({parent_clamped(P.freq, eta.kappa).left for P in img}):
        top = Top(sg.interval(eta.L, 0), xi)
        V = [P for P in img if in_tree(P, top, eta.kappa)]
        if not V:
            continue
        s_top = max(P.space.scale for P in V)
        while len({P.space.pos >> (s_top - P.space.scale) for P in V}) > 1:
            s_top += 1
        pos = V[0].space.pos >> (s_top - V[0].space.scale)
        tree = Tree(Top(sg.interval(s_top, pos), xi), frozenset(V), eta.kappa)
        best = max(best, size_2_star(G, tree))
    return best


def tree_estimate_ratio(eta: Rank1Map, F_triple: Sequence, T, oracle: bool = False) -> tuple[float, float]:
    """``(size_1(F_1 F_2 F_3, T), prod_k size_{2,*,k}(F_k, T))`` for a 1-tree ``T`` of the base set."""
    rows = _rows_of(eta, T)
    s_top, _ = _one_tree_top(eta, rows, T)
    vals = [_as_values(eta, F_triple[j], j, rows) for j in range(3)]
    lhs = float((vals[0] * vals[1] * vals[2] * np.exp2(eta.comp[0][rows, 0])).sum()) / 2.0**s_top
    size = size_2_star_k_bruteforce if oracle else size_2_star_k
    rhs = 1.0
    for k in range(3):
        rhs *= size(eta, F_triple[k], k, T)
    return lhs, rhs


def tree_estimate_check(eta: Rank1Map, F_triple: Sequence, T, C: float = 3.0, oracle: bool = False) -> bool:
    lhs, rhs = tree_estimate_ratio(eta, F_triple, T, oracle)
    return lhs <= C * rhs * (1 + 1e-12) + 1e-300


def one_trees(eta: Rank1Map, rows: np.ndarray | None = None) -> list[np.ndarray]:
    """The sets ``S(Q) = {P : P <=_1 Q}`` for every ``Q`` (as row arrays)."""
    rows = np.arange(len(eta)) if rows is None else rows
    if rows.size == 0:
        return []
    base = eta.comp[0][rows]
    rel = leq_matrix(base, base, 1)
    return [rows[np.flatnonzero(rel[:, q])] for q in range(rows.size)]


def split_checks(eta: Rank1Map) -> dict:
    """Split each ``S(Q)`` into ``S(Q, j)`` and test lacunarity of ``eta_k(S(Q, j))`` for ``k != j``."""
    bad = 0
    for S in one_trees(eta):
        parts = defaultdict(list)
        for r in S:
            parts[_split_index(eta, r, S)].append(r)
        for j, part in parts.items():
            for k in range(3):
                if k != j and not is_lacunary([tile_at(eta.L, *t) for t in eta.comp[k][part].tolist()]):
                    bad += 1
    return {"split_lacunary": bad == 0, "violations": bad}


def _split_index(eta: Rank1Map, r: int, S: np.ndarray) -> int:
    # smallest j whose complement indices are 1-incomparable with every other member
    for j in range(3):
        ok = True
        for k in range(3):
            if k == j:
                continue
            a = eta.comp[k][[r]]
            others = eta.comp[k][S[S != r]]
            if others.size and (leq_matrix(a, others, 1).any() or leq_matrix(others, a, 1).any()):
                ok = False
                break
        if ok:
            return j
    return 0


# ---------------------------------------------------------------------------
# sparse check


@dataclass
class Rank1Report:
    eps: float
    p: tuple
    ratio: float
    form: float
    maximal_l1: float
    collection: SparseCollection
    cons: list
    cons_degenerate: list
    sparse_sum: float
    tree_ratio: float

    def row(self) -> dict:
        c = self.collection
        return {"eps": self.eps, "ratio": self.ratio, "generations": c.depth + 1, "theta": c.theta,
                "nodes": len(c), "tree_ratio": self.tree_ratio}


def rank1_sparse_check(eta: Rank1Map, f_triple: Sequence[Signal], p_vec: Sequence[float],
                       Theta: float | None = None, spec: WaveletSpec = DEFAULT_SPEC,
                       W: Sequence[TileField] | None = None, trees: bool = True) -> Rank1Report:
    """``eps(p) Lambda_P / ||M_p||_1`` with the extremal stopping pipeline and tree-estimate constants.

    Stopping runs with ``q = (1/(1 - eps), 2, 2)``.  ``cons[j]`` is the largest
    ``sup_{P(S)} inf M_{q_j} f_j / <f_j>_{q_j, 3S}``; ``tree_ratio`` is the
    largest tree-estimate ratio over the trees ``S(Q)`` (skipped, reported as
    ``nan``, with ``trees=False``; it does not depend on ``p``).
    """
    eps = eps_vec(p_vec)
    if eps <= 0:
        raise ValueError(f"eps(p) = {eps:g} is not positive")
    f_triple = list(f_triple)
    if len(f_triple) != 3:
        raise ValueError("need three functions")
    arrs = _arrays(f_triple)
    if any(not a.any() for a in arrs):
        raise ValueError("zero denominator: some f_j vanishes")
    L = f_triple[0].L
    if eta.L is not None and eta.L != L:
        raise ValueError(f"map lives on L={eta.L}, signals on L={L}")
    Ws = list(W) if W is not None else _fields(f_triple, spec)
    q = (1.0 / (1.0 - eps), 2.0, 2.0)
    col = stopping_collection_q(f_triple, q, None, Theta)
    n = len(col)
    rows = np.arange(len(eta))
    vals = [_values(Ws[j], eta.comp[j]) for j in range(3)] if len(eta) else [np.zeros(0)] * 3
    base = eta.comp[0]
    prod = vals[0] * vals[1] * vals[2] * np.exp2(base[:, 0]) if len(eta) else np.zeros(0)
    owner = _owner_masks(col, L)
    own = np.array([owner[s][l] for s, _, l in base.tolist()], dtype=np.int64) if len(eta) else np.zeros(0, np.int64)
    form_S = np.bincount(own, weights=prod, minlength=n) if len(eta) else np.zeros(n)
    form = float(form_S.sum())
    _, ml1 = sparse_maximal(f_triple, tuple(float(x) for x in p_vec))
    N = 1 << L
    cons, degenerate = [0.0] * 3, [0] * 3
    for j, (a, qj) in enumerate(zip(arrs, q)):
        Mq = maximal_function(a, qj)
        loc = np.zeros(n)
        for s in np.unique(base[:, 0]) if len(eta) else []:
            sel = base[:, 0] == s
            np.maximum.at(loc, own[sel], scale_inf(Mq, int(s))[base[sel, 2]])
        for i, S in enumerate(col.intervals):
            if loc[i] <= 0:
                continue
            avg = _avg(a, _triple(S, N), qj)
            if avg > 0:
                cons[j] = max(cons[j], float(loc[i] / avg))
            else:
                degenerate[j] += 1
    Mvec, _ = sparse_maximal(f_triple, q)
    sparse_sum = 0.0
    for i in range(n):
        E = col.owner == i
        if E.any():
            sparse_sum += float(E.sum()) * float(Mvec[E].min())
    tree = rank1_tree_ratio(eta, Ws) if trees else math.nan
    return Rank1Report(eps, tuple(p_vec), eps * form / ml1, form, ml1, col, cons, degenerate, sparse_sum, tree)


def rank1_tree_ratio(eta: Rank1Map, Ws: Sequence[TileField]) -> float:
    """Largest ``size_1 / prod size_{2,*,k}`` over the trees ``S(Q)``, ``Q`` in the base set."""
    tree = 0.0
    for S in one_trees(eta):
        lhs, rhs = tree_estimate_ratio(eta, Ws, [tile_at(eta.L, *t) for t in eta.comp[0][S].tolist()])
        if lhs > 0:
            tree = max(tree, lhs / rhs if rhs > 0 else math.inf)
    return tree


def rank1_sparse_ratio(eta: Rank1Map, f_triple: Sequence[Signal], p_vec: Sequence[float], **kw) -> float:
    return rank1_sparse_check(eta, f_triple, p_vec, **kw).ratio


# ---------------------------------------------------------------------------
# continuous-symbol reference


Symbol = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def bht_symbol(gamma: Sequence[float], width: float = 1.0) -> Symbol:
    """``1_{(0, inf)}(beta . xi) psi((1,1,1) . xi)`` with ``beta = gamma x (1,1,1)`` and a Gaussian ``psi``.
    On the plane ``psi`` equals 1 and the symbol is piecewise constant.
    """
    g = _unit_gamma(gamma)
    beta = np.cross(g, np.ones(3))

    def m(x1, x2, x3):
        return (beta[0] * x1 + beta[1] * x2 + beta[2] * x3 > 0) * np.exp(-math.pi * ((x1 + x2 + x3) / width) ** 2)

    return m


def _dist_line(X: np.ndarray, g: np.ndarray) -> np.ndarray:
    t = X @ g
    return np.linalg.norm(X - t[..., None] * g, axis=-1)


def _smooth_step(u: np.ndarray) -> np.ndarray:
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def check_symbol(m: Symbol, gamma: Sequence[float], N: int, tol: float = 0.1) -> dict:
    """Sample ``|m| <= 1`` and ``dist(xi, line) |grad m| <= 1`` on the plane, lattice step ``1/N``.

    Only the plane matters for the form, so derivatives are forward
    differences along the in-plane directions ``e_1 - e_3`` and ``e_2 - e_3``.
    Points within ``4/N`` of the line are skipped.  Raises when either bound
    fails by more than ``tol``.
    """
    g = _unit_gamma(gamma)
    k = (np.arange(N) - N // 2) / N
    x1, x2 = (a.ravel() for a in np.meshgrid(k, k, indexing="ij"))
    X = np.stack([x1, x2, -x1 - x2], axis=1)
    h = 1.0 / N
    v0 = np.asarray(m(X[:, 0], X[:, 1], X[:, 2]), dtype=float)
    sup = float(np.abs(v0).max())
    d = _dist_line(X, g)
    far = d >= 4 * h
    grad = 0.0
    for u in (np.array([1.0, 0, -1.0]), np.array([0, 1.0, -1.0])):
        Y = X + h * u
        v1 = np.asarray(m(Y[:, 0], Y[:, 1], Y[:, 2]), dtype=float)
        if far.any():
            grad = max(grad, float((d[far] * np.abs(v1[far] - v0[far]) / (h * np.sqrt(2))).max()))
    if sup > 1 + tol or grad > 1 + tol:
        raise ValueError(f"symbol violates the distance condition: sup |m| = {sup:.3g}, "
                         f"sup dist |grad m| = {grad:.3g}")
    return {"sup": sup, "grad": grad}


def _lattice_symbol(N: int, m: Symbol, g: np.ndarray, trunc: float) -> np.ndarray:
    """``m~[k1, k2]`` at signed lattice frequencies ``xi_j = k_j/N``, ``xi_3 = -xi_1 - xi_2``.

    Zero when ``xi_3`` leaves ``[-1/2, 1/2)``; multiplied by a smooth cutoff
    vanishing within ``trunc/N`` of the line and equal to 1 beyond ``2 trunc/N``.
    """
    k = np.fft.fftfreq(N) * 1.0
    k = np.where(k >= 0.5, k - 1.0, k)
    x1, x2 = np.meshgrid(k, k, indexing="ij")
    x3 = -x1 - x2
    inside = (x3 >= -0.5) & (x3 < 0.5)
    d = _dist_line(np.stack([x1, x2, x3], axis=-1), g)
    a = trunc / N
    cut = _smooth_step(d / a - 1.0) if a > 0 else np.ones_like(d)
    return np.where(inside, np.asarray(m(x1, x2, x3), dtype=float) * cut, 0.0)


def bht_direct(f1: Signal, f2: Signal, m: Symbol, gamma: Sequence[float], trunc: float = 1.0,
               check: bool = True) -> Signal:
    """Adjoint operator ``T(x)`` with ``sum_x T(x) f_3(x)`` the lattice quadrature over the plane.

    ``T(x) = N^-2 sum_{xi_1, xi_2} m~(xi) f1^(xi_1) f2^(xi_2) e(x (xi_1 + xi_2))``.
    """
    g = _unit_gamma(gamma)
    N = f1.N
    if f2.N != N:
        raise ValueError("signals of different length")
    if check:
        check_symbol(m, g, min(N, 32))
    M = _lattice_symbol(N, m, g, trunc)
    A = np.fft.fft(f1.samples)[:, None] * np.fft.fft(f2.samples)[None, :] * M
    # collect along xi_1 + xi_2 = s (mod N)
    i = np.arange(N)
    s = (i[:, None] + i[None, :]) % N
    G = np.bincount(s.ravel(), weights=A.real.ravel(), minlength=N) + 1j * np.bincount(
        s.ravel(), weights=A.imag.ravel(), minlength=N)
    return Signal(np.fft.ifft(G) / N)


def bht_pairing(f1: Signal, f2: Signal, f3: Signal, m: Symbol, gamma: Sequence[float], trunc: float = 1.0,
                check: bool = True) -> complex:
    return complex(np.sum(bht_direct(f1, f2, m, gamma, trunc, check).samples * f3.samples))


def bht_space_oracle(f1: Signal, f2: Signal, f3: Signal, m: Symbol, gamma: Sequence[float],
                     trunc: float = 1.0) -> complex:
    """``sum_{x, y, z} K(x - y, x - z) f1(y) f2(z) f3(x)`` with the kernel from explicit exponential sums."""
    g = _unit_gamma(gamma)
    N = f1.N
    M = _lattice_symbol(N, m, g, trunc)
    n = np.arange(N)
    E = np.exp(2j * np.pi * np.outer(n, n) / N)
    Kmat = E @ M @ E.T / N**2
    a, b, c = f1.samples, f2.samples, f3.samples
    total = 0j
    for x in range(N):
        Kx = Kmat[(x - n) % N][:, (x - n) % N]
        total += c[x] * (a @ Kx @ b)
    return complex(total)
