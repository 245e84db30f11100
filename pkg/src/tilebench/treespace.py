"""Trees, outer measures, sizes and outer Lorentz norms on tile sets.

Two engines share the definitions.

* A small exact engine works on an explicit finite tile set (bitmasks over at
  most ~14 tiles).  Outer measures are exact set-cover optima, super-level
  measures are computed by enumerating all subsets, and outer Lorentz norms
  are then exact quadratures of finite step functions.
* A dense engine works on a :class:`~tilebench.wavepackets.TileField` over a
  whole standard tiling and evaluates sizes of every maximal tree at once.
  Super-level measures there come from peeling, which only over-estimates.

Top frequencies ``xi`` are stored as exact fractions; for a domain ``J`` of
scale ``kJ`` every membership pattern is realised by a cell centre
``(c + 1/2) 2^-kJ``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .dyadic import DyadicInterval, Tile, contains, parent_clamped
from .wavepackets import TileField, TileFunction, tile_index

__all__ = [
    "Top",
    "Tree",
    "Size",
    "OuterSpace",
    "in_tree",
    "maximal_tree",
    "split_types",
    "split_lac_ov",
    "structure_split",
    "structure_violations",
    "is_lacunary",
    "size_p",
    "size_2_star",
    "size_2_star_bruteforce",
    "size_C",
    "outer_measure",
    "outer_measure_dp",
    "Frontier",
    "superlevel_exact",
    "superlevel_peeled",
    "outer_lorentz_norm",
    "x_norm",
    "y_norm",
    "dense_tree_sizes",
    "dense_outsup",
    "dense_peel",
    "strip_cost",
    "dense_lorentz",
    "dense_x_norm",
    "dense_x_profile",
    "x_from_profile",
    "dense_y_norm",
    "dense_tree_members",
    "tree_cover_size_bound",
]


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True, order=True)
class Top:
    """Top data ``(I_T, xi_T)``."""

    interval: DyadicInterval
    xi: Fraction

    def __str__(self) -> str:
        return f"{self.interval}@{self.xi}"


def _band(xi: Fraction, j: int) -> int:
    return math.floor(xi * 2**j) % (1 << j) if j > 0 else 0


def _xi_in(xi: Fraction, omega: DyadicInterval) -> bool:
    # omega has length 2^scale with scale <= 0
    j = -omega.scale
    return _band(xi, j) == omega.pos


def in_tree(P: Tile, top: Top, kappa: int) -> bool:
    return contains(top.interval, P.space) and _xi_in(top.xi, parent_clamped(P.freq, kappa))


def _order(P: Tile) -> tuple:
    return (-P.space.scale, P.space.pos, P.freq.pos)


@dataclass(frozen=True)
class Tree:
    top: Top
    members: frozenset
    kappa: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(self.members))
        bad = [P for P in self.members if not in_tree(P, self.top, self.kappa)]
        if bad:
            raise ValueError(f"{len(bad)} tiles violate the top data {self.top}")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members, key=_order))

    def with_members(self, members: Iterable[Tile]) -> "Tree":
        return Tree(self.top, frozenset(members), self.kappa)

    def per_interval_counts(self) -> dict:
        out: dict = {}
        for P in self.members:
            out[P.space] = out.get(P.space, 0) + 1
        return out


def maximal_tree(tiles: Iterable[Tile], top: Top, kappa: int) -> Tree:
    return Tree(top, frozenset(P for P in tiles if in_tree(P, top, kappa)), kappa)


def _grandchild_index(P: Tile, kappa: int) -> int:
    par = parent_clamped(P.freq, kappa)
    depth = par.scale - P.freq.scale
    return P.freq.pos - (par.pos << depth)


def split_types(T: Tree) -> list[Tree]:
    """``T = T_|0 u ... u T_|(2^kappa - 1)`` by position of ``omega_P`` under its kappa-parent."""
    parts: list[set] = [set() for _ in range(1 << T.kappa)]
    for P in T.members:
        parts[_grandchild_index(P, T.kappa)].add(P)
    return [T.with_members(p) for p in parts]


def split_lac_ov(T: Tree) -> tuple[Tree, Tree]:
    ov = {P for P in T.members if _xi_in(T.top.xi, P.freq)}
    return T.with_members(T.members - ov), T.with_members(ov)


def structure_split(T: Tree) -> list[Tree]:
    """Scale residue classes ``scl(P) in 2^(kappa Z + u)``, ``u = 1..kappa``."""
    k = T.kappa
    parts: list[set] = [set() for _ in range(k)]
    for P in T.members:
        parts[(P.space.scale - 1) % k].add(P)
    return [T.with_members(p) for p in parts]


def is_lacunary(tiles: Iterable[Tile]) -> bool:
    omegas = sorted({P.freq for P in tiles}, key=lambda w: (w.scale, w.pos))
    for a, b in itertools.combinations(omegas, 2):
        if contains(b, a) or contains(a, b):
            return False
    return True


def structure_violations(T: Tree) -> list[str]:
    """Check the per-interval count bound and properties (i), (ii) of the structural split."""
    out = []
    kap = T.kappa
    for I, c in T.per_interval_counts().items():
        if c > 1 << kap:
            out.append(f"interval {I} carries {c} > 2^kappa tiles")
    for u, Tu in enumerate(structure_split(T), start=1):
        types = split_types(Tu)
        for j, Tj in enumerate(types):
            lac, ov = split_lac_ov(Tj)
            if not is_lacunary(lac.members):
                out.append(f"u={u} j={j}: lacunary part not lacunary")
            for jj in range(1 << kap):
                if jj == j:
                    continue
                ivs = []
                for P in ov.members:
                    par = parent_clamped(P.freq, kap)
                    depth = par.scale - P.freq.scale
                    if jj >= 1 << depth:
                        continue
                    ivs.append(par.grid.interval(P.freq.scale, (par.pos << depth) + jj))
                ivs = sorted(set(ivs), key=lambda w: (w.scale, w.pos))
                for a, b in itertools.combinations(ivs, 2):
                    if contains(a, b) or contains(b, a):
                        out.append(f"u={u} j={j} j'={jj}: sibling-child intervals overlap")
    return out


# ---------------------------------------------------------------------------
# sizes on explicit trees


def _vals(F, members) -> list[tuple[Tile, float]]:
    return [(P, float(F.get(P, 0.0))) for P in members]


def size_p(F: TileFunction, T: Tree, p: float) -> float:
    if not T.members:
        return 0.0
    IT = float(T.top.interval.length)
    vals = _vals(F, T.members)
    if math.isinf(p):
        return max(v for _, v in vals)
    return (sum(v**p * float(P.space.length) for P, v in vals) / IT) ** (1.0 / p)


def _hull(intervals: Sequence[DyadicInterval]) -> DyadicInterval:
    I = intervals[0]
    while not all(contains(I, J) for J in intervals):
        I = parent_clamped(I, 1)
    return I


def size_2_star(F: TileFunction, T: Tree) -> float:
    """Sup over lacunary subtrees, each normalized by its own top interval.

    For every candidate top interval ``I'`` inside ``I_T`` a maximum-weight
    antichain of the laminar family ``Omega(T restricted to I')`` is found by
    a bottom-up pass over frequency intervals.
    """
    if not T.members:
        return 0.0
    IT = T.top.interval
    cands = set()
    for P in T.members:
        I = P.space
        while True:
            cands.add(I)
            if I == IT:
                break
            I = parent_clamped(I, 1)
    best = 0.0
    for I in cands:
        weight: dict = {}
        for P in T.members:
            if contains(I, P.space):
                weight[P.freq] = weight.get(P.freq, 0.0) + float(F.get(P, 0.0)) ** 2 * float(P.space.length)
        if not weight:
            continue
        # narrow intervals first; each interval's value is max(own, sum of maximal sub-intervals)
        omegas = sorted(weight, key=lambda w: (w.scale, w.pos))
        val: dict = {}
        claimed: set = set()
        for w in omegas:
            below = [v for v in omegas if v.scale < w.scale and v not in claimed and contains(w, v)]
            s = sum(val[v] for v in below)
            claimed.update(below)
            val[w] = max(weight[w], s)
        tot = sum(val[w] for w in omegas if w not in claimed)
        best = max(best, tot / float(I.length))
    return math.sqrt(best)


def size_2_star_bruteforce(F: TileFunction, T: Tree) -> float:
    """Oracle: enumerate every lacunary subset of ``T`` (small trees only)."""
    tiles = sorted(T.members, key=_order)
    if len(tiles) > 16:
        raise ValueError("brute-force lacunary enumeration limited to 16 tiles")
    best = 0.0
    for r in range(1, len(tiles) + 1):
        for U in itertools.combinations(tiles, r):
            if not is_lacunary(U):
                continue
            H = _hull([P.space for P in U])
            if not contains(T.top.interval, H):
                continue
            s = sum(float(F.get(P, 0.0)) ** 2 * float(P.space.length) for P in U)
            best = max(best, s / float(H.length))
    return math.sqrt(best)


def size_C(F: TileFunction, T: Tree) -> float:
    if T.kappa != 1:
        raise ValueError("size_C is defined on 1-trees")
    lac, ov = split_lac_ov(T)
    IT = float(T.top.interval.length)
    s2 = math.sqrt(sum(float(F.get(P, 0.0)) ** 2 * float(P.space.length) for P in lac.members) / IT)
    s1 = sum(float(F.get(P, 0.0)) * float(P.space.length) for P in ov.members) / IT
    return s2 + s1


@dataclass(frozen=True)
class Size:
    """A size: ``kind`` in ``{"p", "2*", "C"}``; ``p`` used by ``"p"`` (``inf`` allowed)."""

    kind: str
    p: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("p", "2*", "C"):
            raise ValueError(f"unknown size kind {self.kind!r}")

    def __call__(self, F: TileFunction, T: Tree) -> float:
        if self.kind == "p":
            return size_p(F, T, self.p)
        if self.kind == "2*":
            return size_2_star(F, T)
        return size_C(F, T)

    def __str__(self) -> str:
        return f"size_{self.p:g}" if self.kind == "p" else f"size_{self.kind}"


# ---------------------------------------------------------------------------
# small exact engine


class OuterSpace:
    """Local tile space ``S^J`` with kappa-trees, for explicit small tile sets."""

    def __init__(self, J: DyadicInterval, kappa: int = 1):
        if J.grid.shift != 0:
            raise ValueError("outer spaces live on the standard grid D_0")
        self.J = J
        self.kappa = kappa
        self._tops: list[Top] | None = None
        self._arrays: tuple | None = None

    @property
    def L(self) -> int:
        return self.J.grid.k_max

    def local_tiles(self, max_scale: int | None = None) -> list[Tile]:
        from .dyadic import tile_at

        kJ = self.J.scale
        top = kJ if max_scale is None else min(kJ, max_scale)
        out = []
        for k in range(top, -1, -1):
            base = self.J.pos << (kJ - k)
            for l in range(base, base + (1 << (kJ - k))):
                for m in range(1 << k):
                    out.append(tile_at(self.L, k, m, l))
        return out

    def contains_tile(self, P: Tile) -> bool:
        return contains(self.J, P.space)

    def xi_reps(self) -> list[Fraction]:
        R = self.J.scale
        return [Fraction(2 * c + 1, 2 ** (R + 1)) for c in range(1 << R)]

    def tops(self) -> list[Top]:
        """Every top ``(I, xi)`` with ``I`` inside ``J``, in peeling order."""
        if self._tops is None:
            out = []
            kJ = self.J.scale
            reps = self.xi_reps()
            for k in range(kJ, -1, -1):
                base = self.J.pos << (kJ - k)
                for l in range(base, base + (1 << (kJ - k))):
                    I = self.J.grid.interval(k, l)
                    out.extend(Top(I, xi) for xi in reps)
            self._tops = out
        return self._tops

    def top_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(scale, position, xi cell)`` of :meth:`tops` as integer arrays."""
        if self._arrays is None:
            R = self.J.scale
            ts = self.tops()
            self._arrays = (
                np.array([t.interval.scale for t in ts], dtype=np.int64),
                np.array([t.interval.pos for t in ts], dtype=np.int64),
                np.array([math.floor(t.xi * 2**R) for t in ts], dtype=np.int64),
            )
        return self._arrays


@dataclass
class _Universe:
    """Bitmask view of a finite tile set inside an :class:`OuterSpace`."""

    space: OuterSpace
    tiles: list
    cost: np.ndarray = field(init=False)
    tops: list = field(init=False)
    tree_masks: list = field(init=False)
    ov_masks: list = field(init=False)

    def __post_init__(self) -> None:
        self.tiles = sorted(set(self.tiles), key=_order)
        for P in self.tiles:
            if not self.space.contains_tile(P):
                raise ValueError(f"tile {P} is not inside J")
        self.n = len(self.tiles)
        self.mass = np.array([float(P.space.length) for P in self.tiles])
        kI, lI, cI = self.space.top_arrays()
        R = self.space.J.scale
        kap = self.space.kappa
        idx = np.array([tile_index(P)[1:] for P in self.tiles], dtype=np.int64).reshape(-1, 3)
        k, m, l = (idx[:, i][None, :] for i in range(3))
        kI, lI, cI = kI[:, None], lI[:, None], cI[:, None]
        inside = (k <= kI) & ((l >> np.maximum(kI - k, 0)) == lI)
        j = k - kap
        par = np.where(j <= 0, True, (cI >> np.clip(R - j, 0, None)) == (m >> kap))
        tree = inside & par
        ov = tree & ((cI >> (R - k)) == m)
        bits = np.int64(1) << np.arange(self.n, dtype=np.int64)
        tmask = (tree * bits).sum(axis=1)
        omask = (ov * bits).sum(axis=1)
        keys = np.stack([tmask, omask, kI[:, 0]], axis=1)
        keep = tmask != 0
        _, first = np.unique(keys[keep], axis=0, return_index=True)
        rows = np.flatnonzero(keep)[np.sort(first)]
        all_tops = self.space.tops()
        self.tops = [all_tops[r] for r in rows]
        self.tree_masks = [int(x) for x in tmask[rows]]
        self.ov_masks = [int(x) for x in omask[rows]]
        self.cost = 2.0 ** (kI[rows, 0] - R).astype(float)

    def mask_of(self, tiles: Iterable[Tile]) -> int:
        idx = {P: i for i, P in enumerate(self.tiles)}
        m = 0
        for P in tiles:
            if P not in idx:
                raise ValueError(f"tile {P} outside the universe")
            m |= 1 << idx[P]
        return m

    def cover_candidates(self, target: int) -> list[tuple[float, int, int]]:
        """Non-dominated ``(cost, mask, top index)`` restricted to ``target``."""
        best: dict = {}
        for t, (mask, c) in enumerate(zip(self.tree_masks, self.cost)):
            m = mask & target
            if m and (m not in best or c < best[m][0]):
                best[m] = (float(c), t)
        items = sorted(((c, m, t) for m, (c, t) in best.items()), key=lambda x: (x[0], -bin(x[1]).count("1")))
        keep = []
        for c, m, t in items:
            if any(kc <= c and (m & ~km) == 0 for kc, km, _ in keep):
                continue
            keep.append((c, m, t))
        return keep


def _lowbit(x: int) -> int:
    return (x & -x).bit_length() - 1


def outer_measure_dp(n: int, cands: list[tuple[float, int, int]]) -> np.ndarray:
    """Exact ``mu`` of every subset of an ``n``-element universe by subset DP."""
    full = 1 << n
    by_low: list[list] = [[] for _ in range(n)]
    for c, m, _ in cands:
        for i in range(n):
            if m >> i & 1:
                by_low[i].append((c, m))
    mu = np.zeros(full)
    for S in range(1, full):
        i = _lowbit(S)
        mu[S] = min(c + mu[S & ~m] for c, m in by_low[i])
    return mu


def _greedy(n: int, target: int, cands, mass, order_key) -> tuple[float, list[int]]:
    left = target
    total = 0.0
    picks = []
    while left:
        best = None
        for c, m, t in cands:
            cov = m & left
            if not cov:
                continue
            gain = sum(mass[i] for i in range(n) if cov >> i & 1) / c
            key = (-gain, order_key(t))
            if best is None or key < best[0]:
                best = (key, c, m, t)
        assert best is not None, "uncoverable tile set"
        _, c, m, t = best
        total += c
        picks.append(t)
        left &= ~m
    return total, picks


def _bnb(n: int, target: int, cands, upper: float) -> float:
    by_low: list[list] = [[] for _ in range(n)]
    for c, m, _ in cands:
        for i in range(n):
            if m >> i & 1:
                by_low[i].append((c, m))
    for lst in by_low:
        lst.sort()
    cheapest = [lst[0][0] if lst else math.inf for lst in by_low]
    best = [upper]

    def rec(left: int, cost: float) -> None:
        if not left:
            best[0] = min(best[0], cost)
            return
        lb = max(cheapest[i] for i in range(n) if left >> i & 1)
        if cost + lb >= best[0] - 1e-15:
            return
        i = _lowbit(left)
        for c, m in by_low[i]:
            rec(left & ~m, cost + c)

    rec(target, 0.0)
    return best[0]


def outer_measure(A: Iterable[Tile], space: OuterSpace, mode: str = "exact") -> float:
    """``mu^{J,kappa}(A)``: exact branch-and-bound or greedy cover by maximal trees."""
    A = list(A)
    if not A:
        return 0.0
    U = _Universe(space, A)
    target = (1 << U.n) - 1
    cands = U.cover_candidates(target)
    key = _top_key(U)
    g, _ = _greedy(U.n, target, cands, U.mass, key)
    if mode == "greedy":
        return g
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    return _bnb(U.n, target, cands, g + 1e-12)


def _top_key(U: _Universe) -> Callable[[int], tuple]:
    def key(t: int) -> tuple:
        top = U.tops[t]
        return (-top.interval.scale, top.interval.left, top.xi)

    return key


# -- sizes over all subsets of a universe -----------------------------------


def _subset_matrix(n: int) -> np.ndarray:
    s = np.arange(1 << n)[:, None]
    return ((s >> np.arange(n)[None, :]) & 1).astype(bool)


def _lacunary_atoms(U: _Universe) -> list[tuple[int, float]]:
    """Maximal lacunary subsets of each maximal tree, with their top lengths."""
    atoms: set = set()
    for t, mask in enumerate(U.tree_masks):
        top = U.tops[t]
        members = [i for i in range(U.n) if mask >> i & 1]
        subs = {U.tiles[i].space for i in members}
        cands = set()
        for I in subs:
            while True:
                cands.add(I)
                if I == top.interval:
                    break
                I = parent_clamped(I, 1)
        for I in cands:
            inside = [i for i in members if contains(I, U.tiles[i].space)]
            if not inside:
                continue
            groups: dict = {}
            for i in inside:
                groups.setdefault(U.tiles[i].freq, 0)
                groups[U.tiles[i].freq] |= 1 << i
            for anti in _maximal_antichains(list(groups)):
                m = 0
                for w in anti:
                    m |= groups[w]
                atoms.add((m, float(I.length)))
    return sorted(atoms)


def _maximal_antichains(omegas: list) -> list[list]:
    """All maximal antichains of a small laminar family under inclusion."""
    omegas = sorted(omegas, key=lambda w: (-w.scale, w.pos))
    n = len(omegas)
    comp = [[i != j and (contains(omegas[i], omegas[j]) or contains(omegas[j], omegas[i])) for j in range(n)] for i in range(n)]
    out = []

    def rec(i: int, chosen: list) -> None:
        if i == n:
            if all(any(comp[j][c] for c in chosen) or j in chosen for j in range(n)):
                out.append([omegas[c] for c in chosen])
            return
        if not any(comp[i][c] for c in chosen):
            rec(i + 1, chosen + [i])
        rec(i + 1, chosen)

    rec(0, [])
    return out


def _outsup_all(U: _Universe, F: np.ndarray, size: Size) -> np.ndarray:
    """``outsup_s(F 1_R)`` for every subset ``R`` of the universe."""
    S = _subset_matrix(U.n)
    FR = S * F[None, :]
    mass = U.mass[None, :]
    L = float(U.space.J.length)
    best = np.zeros(S.shape[0])
    if size.kind == "p":
        p = size.p
        for t, mask in enumerate(U.tree_masks):
            cols = np.array([mask >> i & 1 for i in range(U.n)], bool)
            IT = U.cost[t] * L
            if math.isinf(p):
                v = FR[:, cols].max(axis=1)
            else:
                v = ((FR[:, cols] ** p * mass[:, cols]).sum(axis=1) / IT) ** (1 / p)
            best = np.maximum(best, v)
    elif size.kind == "2*":
        atoms = _lacunary_atoms(U)
        if atoms:
            M = np.array([[m >> i & 1 for i in range(U.n)] for m, _ in atoms], float)
            lens = np.array([a for _, a in atoms])
            best = np.sqrt(((FR**2 * mass) @ M.T / lens[None, :]).max(axis=1))
    else:
        if U.space.kappa != 1:
            raise ValueError("size_C needs kappa = 1")
        for t, (mask, ov) in enumerate(zip(U.tree_masks, U.ov_masks)):
            lac = mask & ~ov
            cl = np.array([lac >> i & 1 for i in range(U.n)], bool)
            co = np.array([ov >> i & 1 for i in range(U.n)], bool)
            IT = U.cost[t] * L
            v = np.sqrt((FR[:, cl] ** 2 * mass[:, cl]).sum(axis=1) / IT) + (FR[:, co] * mass[:, co]).sum(axis=1) / IT
            best = np.maximum(best, v)
    return best


@dataclass(frozen=True)
class Frontier:
    """Pareto steps of ``(mu(A), outsup(F 1_{A^c}))``: ``F*(t) = r_j`` on ``[c_j, c_{j+1})``."""

    c: tuple
    r: tuple

    def rearrangement(self, t: float) -> float:
        val = 0.0
        for cj, rj in zip(self.c, self.r):
            if t >= cj:
                val = rj
        return val

    def level_measure(self, tau: float) -> float:
        for cj, rj in zip(self.c, self.r):
            if rj <= tau:
                return cj
        return self.c[-1]

    def to_csv(self) -> str:
        """Rows ``t,F*(t)`` at each step start (right-continuous steps)."""
        rows = ["# tilebench-v1", "t,rearrangement"]
        rows += [f"{c!r},{r!r}" for c, r in zip(self.c, self.r)]
        return "\n".join(rows) + "\n"

    def lorentz(self, p: float, r: float) -> float:
        if p <= 0:
            raise ValueError("p must be positive")
        c = list(self.c) + [math.inf]
        top = self.r[0] if self.r else 0.0
        if math.isinf(p):
            # L^{inf,r} with r < inf: the dt/t integral diverges at t = 0
            return top if math.isinf(r) or top == 0 else math.inf
        if math.isinf(r):
            return max((rj * c[j + 1] ** (1 / p) for j, rj in enumerate(self.r) if rj > 0), default=0.0)
        acc = 0.0
        for j, rj in enumerate(self.r):
            if rj == 0:
                continue
            hi = c[j + 1]
            if math.isinf(hi):
                return math.inf
            acc += rj**r * (p / r) * (hi ** (r / p) - c[j] ** (r / p))
        return acc ** (1 / r)


def _frontier(mu: np.ndarray, outs: np.ndarray, full: int) -> Frontier:
    # A ranges over subsets, residual = full & ~A
    A = np.arange(full + 1)
    res = outs[full & ~A]
    order = np.lexsort((res, mu[A]))
    cs, rs = [], []
    for i in order:
        c, r = float(mu[A[i]]), float(res[i])
        if rs and r >= rs[-1]:
            continue
        if cs and c == cs[-1]:
            rs[-1] = min(rs[-1], r)
            continue
        cs.append(c)
        rs.append(r)
    if cs[0] != 0.0:
        cs.insert(0, 0.0)
        rs.insert(0, float(outs[full]))
    return Frontier(tuple(cs), tuple(rs))


class _Exact:
    """Cached exact tables for one tile function on one outer space."""

    def __init__(self, F: TileFunction, space: OuterSpace, tiles: Iterable[Tile] | None = None):
        support = [P for P, v in F.items() if v > 0] if tiles is None else list(tiles)
        if len(support) > 14:
            raise ValueError("exact engine limited to 14 tiles")
        self.U = _Universe(space, support)
        self.full = (1 << self.U.n) - 1
        self.F = np.array([float(F.get(P, 0.0)) for P in self.U.tiles])
        self.mu = outer_measure_dp(self.U.n, self.U.cover_candidates(self.full)) if self.U.n else np.zeros(1)
        self._outs: dict = {}

    def outs(self, size: Size, F: np.ndarray | None = None) -> np.ndarray:
        if F is not None:
            return _outsup_all(self.U, F, size)
        if size not in self._outs:
            self._outs[size] = _outsup_all(self.U, self.F, size)
        return self._outs[size]


def superlevel_exact(F: TileFunction, space: OuterSpace, size: Size, tiles: Iterable[Tile] | None = None) -> Frontier:
    """Exact super-level measure / rearrangement for a small support."""
    ex = _Exact(F, space, tiles)
    if ex.U.n == 0:
        return Frontier((0.0,), (0.0,))
    return _frontier(ex.mu, ex.outs(size), ex.full)


def superlevel_peeled(F: TileFunction, space: OuterSpace, size: Size, tau: float) -> tuple[float, list[Top]]:
    """Upper bound for ``mu_s[F](tau)`` by peeling offending maximal trees.

    Offenders are removed largest top first, then leftmost, then smallest xi.
    Returns the charged measure and the removed tops.
    """
    support = [P for P, v in F.items() if v > 0]
    live = dict(F)
    removed = []
    charged = 0.0
    tops = space.tops()  # already in peeling order
    changed = True
    while changed:
        changed = False
        for top in tops:
            T = maximal_tree(support, top, space.kappa)
            T = T.with_members(P for P in T.members if live.get(P, 0) > 0)
            if T.members and size(live, T) > tau:
                for P in T.members:
                    live[P] = 0.0
                charged += float(top.interval.length / space.J.length)
                removed.append(top)
                changed = True
                break
    return charged, removed


def outer_lorentz_norm(F: TileFunction, space: OuterSpace, size: Size, p: float, r: float = math.inf) -> float:
    if p <= 0:
        raise ValueError("p must be positive")
    if not any(v > 0 for v in F.values()):
        return 0.0
    return superlevel_exact(F, space, size).lorentz(p, r)


def y_norm(F: TileFunction, space: OuterSpace, size: Size, p: float) -> float:
    fr = superlevel_exact(F, space, size)
    return max(fr.lorentz(p, math.inf), fr.lorentz(math.inf, math.inf))


def x_norm(F: TileFunction, space: OuterSpace, size: Size, p: float, a: float,
           subsets: Iterable[Iterable[Tile]] | None = None) -> float:
    """``sup_A ||F 1_A||_{L^{a,inf}} / mu(A)^(1/a - 1/p)``.

    With ``subsets=None`` every subset of the support is scanned, which is
    exact for supports of at most ~12 tiles.
    """
    if not 1 <= a <= p:
        raise ValueError("need 1 <= a <= p")
    ex = _Exact(F, space)
    n = ex.U.n
    if n == 0:
        return 0.0
    e = 1 / a - 1 / p
    masks = range(1, ex.full + 1) if subsets is None else [ex.U.mask_of(A) for A in subsets]
    best = 0.0
    for A in masks:
        FA = np.where([(A >> i) & 1 for i in range(n)], ex.F, 0.0)
        if not FA.any():
            continue
        outs = ex.outs(size, FA)
        # subsets B of A; residual A & ~B
        subs = _submasks(A)
        pts = sorted(((ex.mu[B], outs[A & ~B]) for B in subs), key=lambda x: (x[0], x[1]))
        cs, rs = [], []
        for c, r in pts:
            if rs and r >= rs[-1]:
                continue
            if cs and c == cs[-1]:
                rs[-1] = min(rs[-1], r)
                continue
            cs.append(float(c))
            rs.append(float(r))
        weak = Frontier(tuple(cs), tuple(rs)).lorentz(a, math.inf)
        best = max(best, weak / ex.mu[A] ** e)
    return best


def _submasks(A: int) -> list[int]:
    out = [0]
    s = A
    while s:
        out.append(s)
        s = (s - 1) & A
    return out


# ---------------------------------------------------------------------------
# dense engine over a whole tiling


def _band_reduce(a: np.ndarray, group: int, op) -> np.ndarray:
    """Reduce consecutive groups of ``group`` rows."""
    if group == 1:
        return a
    return op(a.reshape(a.shape[0] // group, group, a.shape[1]), axis=1)


def _space_reduce(a: np.ndarray, group: int, op) -> np.ndarray:
    if group == 1:
        return a
    return op(a.reshape(a.shape[0], a.shape[1] // group, group), axis=2)


def _tree_reduce(G: dict, L: int, K: int, kappa: int, R: int, op) -> np.ndarray:
    """Reduce ``G`` over each maximal tree with top scale ``K``; xi given at resolution ``R >= K - kappa``.

    Returns shape ``(2^R, 2^(L-K))``.
    """
    out = None
    for k in range(K + 1):
        a = G[k]
        j = k - kappa  # resolution of the kappa-parent band
        if j <= 0:
            b = op(a, axis=0, keepdims=True)
        else:
            b = _band_reduce(a, 1 << kappa, op)
        b = _space_reduce(b, 1 << (K - k), op)
        # xi cell c at resolution R sits in parent band c >> (R - j)
        rows = np.arange(1 << R) >> (R - max(j, 0)) if j > 0 else np.zeros(1 << R, int)
        b = b[rows]
        out = b if out is None else (out + b if op is np.sum else np.maximum(out, b))
    return out


def _lacunary_dp(G2: dict, L: int, K: int, kappa: int) -> np.ndarray:
    """Max-weight antichain of ``Omega(T(I, xi))`` for every top of scale ``K``.

    ``G2[k][m, l]`` holds ``F^2 |I_P|``.  Output has shape ``(2^max(K-kappa,0), 2^(L-K))``.
    """
    R = max(K - kappa, 0)
    X, Pn = 1 << R, 1 << (L - K)
    cells = np.arange(X)
    C = None
    for k in range(K, -1, -1):
        # weights of tree bands at scale k, local index i
        w_all = _space_reduce(G2[k], 1 << (K - k), np.sum)  # (2^k, Pn)
        nloc = 1 << min(kappa, k)
        if k > kappa:
            a = cells >> (R - (k - kappa))  # parent band at resolution k - kappa
            idx = (a[:, None] << kappa) + np.arange(nloc)[None, :]
        else:
            idx = np.broadcast_to(np.arange(nloc)[None, :], (X, nloc))
        w = w_all[idx]  # (X, nloc, Pn)
        if C is None:
            C = w
            continue
        # children of local band i' at scale k live at scale k+1
        if k + 1 > kappa:
            bit = (cells >> (R - (k + 1 - kappa))) & 1 if k + 1 - kappa > 0 else np.zeros(X, int)
            half = 1 << (kappa - 1)
            ip = np.arange(nloc)[None, :]
            lo = bit[:, None] * half
            valid = (ip >= lo) & (ip < lo + half)
            c0 = np.clip(2 * ip - bit[:, None] * (1 << kappa), 0, C.shape[1] - 2)
            pair = np.take_along_axis(C, c0[:, :, None], 1) + np.take_along_axis(C, c0[:, :, None] + 1, 1)
            kids = np.where(valid[:, :, None], pair, 0.0)
        else:
            kids = C[:, 0::2, :] + C[:, 1::2, :]
        C = np.maximum(w, kids)
    return C[:, 0, :]


def dense_tree_sizes(F: TileField, size: Size, kappa: int = 1) -> dict:
    """Size of every maximal tree ``T(I, xi)``: dict ``K -> array (xi cells, positions)``.

    ``xi`` is resolved at ``K - kappa`` for ``size_p`` and ``size_2*``, at ``K`` for ``size_C``.
    """
    L = F.L
    out = {}
    if size.kind == "p":
        p = size.p
        if math.isinf(p):
            for K in range(L + 1):
                out[K] = _tree_reduce(F.arrays, L, K, kappa, max(K - kappa, 0), np.max)
        else:
            G = {k: F.arrays[k] ** p * float(1 << k) for k in range(L + 1)}
            for K in range(L + 1):
                out[K] = (_tree_reduce(G, L, K, kappa, max(K - kappa, 0), np.sum) / float(1 << K)) ** (1 / p)
    elif size.kind == "2*":
        G2 = {k: F.arrays[k] ** 2 * float(1 << k) for k in range(L + 1)}
        best = None
        for K in range(L + 1):
            D = _lacunary_dp(G2, L, K, kappa) / float(1 << K)
            if best is not None:
                # sub-tops of scale K-1: spatial children, xi refined
                R_prev = max(K - 1 - kappa, 0)
                R = max(K - kappa, 0)
                sub = _space_reduce(best, 2, np.max)
                rows = np.arange(1 << R) >> (R - R_prev)
                D = np.maximum(D, sub[rows])
            best = D
            out[K] = np.sqrt(D)
    else:
        if kappa != 1:
            raise ValueError("size_C needs kappa = 1")
        G2 = {k: F.arrays[k] ** 2 * float(1 << k) for k in range(L + 1)}
        G1 = {k: F.arrays[k] * float(1 << k) for k in range(L + 1)}
        for K in range(L + 1):
            tree2 = _tree_reduce(G2, L, K, 1, K, np.sum)
            ov2 = _tree_reduce(G2, L, K, 0, K, np.sum)
            ov1 = _tree_reduce(G1, L, K, 0, K, np.sum)
            lac2 = np.maximum(tree2 - ov2, 0.0)
            out[K] = np.sqrt(lac2 / float(1 << K)) + ov1 / float(1 << K)
    return out


def dense_outsup(F: TileField, size: Size, kappa: int = 1) -> float:
    sizes = dense_tree_sizes(F, size, kappa)
    return max(float(a.max()) for a in sizes.values())


def dense_tree_members(L: int, K: int, offenders: np.ndarray, kappa: int, R: int) -> dict:
    """Tiles covered by the maximal trees flagged in ``offenders`` (shape ``(2^R, 2^(L-K))``)."""
    out = {}
    for k in range(L + 1):
        if k > K:
            out[k] = np.zeros((1 << k, 1 << (L - k)), bool)
            continue
        j = k - kappa
        if j <= 0:
            band_hit = offenders.any(axis=0, keepdims=True)
            band_rows = np.zeros(1 << k, int)
        else:
            band_hit = _band_reduce(offenders, 1 << (R - j), np.any) if R > j else offenders
            band_rows = np.arange(1 << k) >> kappa
        pos_cols = np.arange(1 << (L - k)) >> (K - k)
        out[k] = band_hit[np.ix_(band_rows, pos_cols)]
    return out


def _peel_offenders(F: TileField, size: Size, tau: float, kappa: int) -> tuple[float, dict]:
    L = F.L
    live = TileField(L, {k: a.copy() for k, a in F.arrays.items()})
    removed = {k: np.zeros(a.shape, bool) for k, a in F.arrays.items()}
    charged = 0.0
    for _ in range(4 * (L + 1) + 4):
        sizes = dense_tree_sizes(live, size, kappa)
        hits = [K for K in range(L, -1, -1) if sizes[K].max() > tau]
        if not hits:
            return charged, removed
        K = hits[0]
        off = sizes[K] > tau
        R = K if size.kind == "C" else max(K - kappa, 0)
        # distinct trees only: in size_C the tree depends on xi at resolution K - kappa
        tree_off = _band_reduce(off, 1 << (R - max(K - kappa, 0)), np.any) if size.kind == "C" else off
        charged += float(tree_off.sum()) * 2.0**K / 2.0**L
        mem = dense_tree_members(L, K, tree_off, kappa, max(K - kappa, 0))
        for k in range(L + 1):
            live.arrays[k][mem[k]] = 0.0
            removed[k] |= mem[k]
    raise RuntimeError("peeling did not terminate")


def strip_cost(L: int, s: int, kappa: int = 1) -> float:
    """Cost of covering every tile of scale ``<= s`` by the trees with tops at scale ``s``."""
    return 2.0 ** max(s - kappa, 0) if s >= 0 else 0.0


def dense_peel(F: TileField, size: Size, tau: float, kappa: int = 1, strip: bool = True) -> tuple[float, dict]:
    """Peeling upper bound for ``mu_s[F](tau)`` on the whole torus of ``F``.

    All offending tops at the current largest offending scale are removed
    together.  With ``strip`` the tiles of scale ``<= s`` are first removed
    wholesale at cost :func:`strip_cost` and the best ``s`` is kept.  Returns
    the charged measure and the removed-tile masks.
    """
    L = F.L
    best = _peel_offenders(F, size, tau, kappa)
    if not strip or best[0] == 0:
        return best
    for s in range(L + 1):
        c0 = strip_cost(L, s, kappa)
        if c0 >= best[0]:
            break
        G = TileField(L, {k: (np.zeros_like(a) if k <= s else a) for k, a in F.arrays.items()})
        c, rem = _peel_offenders(G, size, tau, kappa)
        if c0 + c < best[0]:
            for k in range(s + 1):
                rem[k] = np.ones(rem[k].shape, bool)
            best = (c0 + c, rem)
    return best


def _tau_grid(top: float, steps_per_octave: int = 4, depth: int = 12) -> np.ndarray:
    return top * 2.0 ** (-np.arange(1, steps_per_octave * depth + 1) / steps_per_octave)


def dense_lorentz(F: TileField, size: Size, p: float, kappa: int = 1, taus: np.ndarray | None = None) -> float:
    """Upper proxy for ``||F||_{L^{p,inf}(size)}``.

    On ``[mu(tau_{i-1}), mu(tau_i))`` the rearrangement is at most ``tau_{i-1}``,
    so ``max_i tau_{i-1} mu_peel(tau_i)^(1/p)`` bounds the weak norm; past the
    last grid level the full-support cost closes the curve.
    """
    top = dense_outsup(F, size, kappa)
    if top == 0:
        return 0.0
    if math.isinf(p):
        return top
    taus = _tau_grid(top) if taus is None else taus
    full, _ = dense_peel(F, size, 0.0, kappa)
    best = 0.0
    prev = top
    for t in taus:
        m = dense_peel(F, size, float(t), kappa)[0]
        best = max(best, prev * m ** (1 / p))
        prev = float(t)
        if m >= full:
            return best
    return max(best, prev * full ** (1 / p))


def dense_y_norm(F: TileField, size: Size, p: float, kappa: int = 1) -> float:
    return max(dense_lorentz(F, size, p, kappa), dense_outsup(F, size, kappa))


def _masked(F: TileField, mask: dict) -> TileField:
    return TileField(F.L, {k: np.where(mask[k], F.arrays[k], 0.0) for k in F.arrays})


def dense_x_profile(F: TileField, size: Size, a: float = 2.0, kappa: int = 1, steps_per_octave: int = 2,
                    depth: int = 10, extra: Sequence[dict] = ()) -> list[tuple[float, float]]:
    """Candidate pairs ``(c(A), ||F 1_A||_{L^{a,inf}})`` over offender unions ``A`` from peeling.

    ``c(A)`` is the charged cover cost; ``extra`` may add further subsets given
    as tile masks.  The pairs do not depend on the outer exponent.
    """
    top = dense_outsup(F, size, kappa)
    if top == 0:
        return []
    subsets = []
    for t in _tau_grid(top, steps_per_octave, depth):
        c, removed = dense_peel(F, size, t, kappa)
        if c > 0:
            subsets.append((c, removed))
    for mask in extra:
        FA = _masked(F, mask)
        c, _ = dense_peel(FA, size, 0.0, kappa)
        if c > 0:
            subsets.append((c, mask))
    seen = set()
    out = []
    for c, mask in subsets:
        key = (c, tuple(int(m.sum()) for m in mask.values()))
        if key in seen:
            continue
        seen.add(key)
        FA = _masked(F, mask)
        taus = _tau_grid(dense_outsup(FA, size, kappa), steps_per_octave, depth)
        out.append((c, dense_lorentz(FA, size, a, kappa, taus)))
    return out


def x_from_profile(profile: Sequence[tuple[float, float]], p: float, a: float = 2.0) -> float:
    e = 1 / a - 1 / p
    return max((v / c**e for c, v in profile), default=0.0)


def dense_x_norm(F: TileField, size: Size, p: float, a: float = 2.0, kappa: int = 1,
                 steps_per_octave: int = 2, depth: int = 10, extra: Sequence[dict] = ()) -> float:
    """Proxy for the ``X^{p,inf}_a`` norm: ``max ||F 1_A||_{L^{a,inf}} / c(A)^(1/a - 1/p)`` over :func:`dense_x_profile`."""
    if not 1 <= a <= p:
        raise ValueError("need 1 <= a <= p")
    return x_from_profile(dense_x_profile(F, size, a, kappa, steps_per_octave, depth, extra), p, a)


def tree_cover_size_bound(F: TileField, region: dict, tops: Sequence[tuple[int, int, int]], kappa: int = 1,
                          tol: float = 1e-12) -> tuple[bool, float, float]:
    """Check ``outsup_{2*}(F 1_P) <= 2^(kappa/2) sup_tops size_2*(F 1_P, T(I, xi))``.

    ``region`` is a tile mask for ``P``; ``tops`` are ``(K, xi cell at resolution
    max(K - kappa, 0), position)`` and must cover ``P``.
    """
    L = F.L
    FP = _masked(F, region)
    covered = {k: np.zeros(region[k].shape, bool) for k in region}
    for K, c, pos in tops:
        R = max(K - kappa, 0)
        off = np.zeros((1 << R, 1 << (L - K)), bool)
        off[c, pos] = True
        mem = dense_tree_members(L, K, off, kappa, R)
        for k in covered:
            covered[k] |= mem[k]
    if any((region[k] & ~covered[k]).any() for k in region):
        raise ValueError("tops do not cover the tile collection")
    sizes = dense_tree_sizes(FP, Size("2*"), kappa)
    lhs = max(float(a.max()) for a in sizes.values())
    rhs = max((float(sizes[K][c, pos]) for K, c, pos in tops), default=0.0)
    return lhs <= 2 ** (kappa / 2) * rhs * (1 + tol) + tol, lhs, rhs
