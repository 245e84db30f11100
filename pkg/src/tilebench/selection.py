"""Density of a tile collection and the density-increment forest decomposition.

Tile collections are handled as masks: ``dict k -> bool array (2^k, 2^(L-k))``
indexed ``[m, l]`` like :class:`~tilebench.wavepackets.TileField`.  Frequency
parents ``omega^{p(1)}`` of scale-``k`` tiles are bands at resolution
``max(k - 1, 0)``; the density field is stored per spatial scale with one row
per parent band.

The tailed average uses the weight ``chi_I^512 = (1 + (d/|I|)^2)^-256``.  It is
below ``1e-30`` once ``d > 0.56 |I|``, so each average is a finite window sum;
the neglected mass is at most ``1e-30 * sum |f|``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .dyadic import DyadicInterval, Tile, contains, order_leq, parent_clamped, tile_at
from .signal import Signal, maximal_function
from .treespace import Top, Tree, _tree_reduce
from .wavepackets import _check_lattice, scale_inf, tile_index

__all__ = [
    "TAIL_EXPONENT",
    "WINDOW_CUTOFF",
    "tiles_to_mask",
    "mask_to_tiles",
    "full_mask",
    "density_field",
    "density",
    "density_bruteforce",
    "Forest",
    "density_decomposition",
    "tops_packing_constant",
    "PackingReport",
    "incomparable_packing_check",
]

TAIL_EXPONENT = 512
WINDOW_CUTOFF = 1e-30

Mask = dict


def tiles_to_mask(L: int, tiles: Iterable[Tile]) -> Mask:
    out = {k: np.zeros((1 << k, 1 << (L - k)), bool) for k in range(L + 1)}
    for P in tiles:
        LL, k, m, l = tile_index(P)
        if LL != L:
            raise ValueError(f"tile {P} is not on the length-2^{L} tiling")
        out[k][m, l] = True
    return out


def mask_to_tiles(L: int, mask: Mask) -> list[Tile]:
    out = []
    for k in range(L, -1, -1):
        for m, l in sorted(zip(*np.nonzero(mask[k])), key=lambda t: (t[1], t[0])):
            out.append(tile_at(L, k, int(m), int(l)))
    return out


def full_mask(L: int) -> Mask:
    return {k: np.ones((1 << k, 1 << (L - k)), bool) for k in range(L + 1)}


def _nbands(k: int) -> int:
    return 1 << max(k - 1, 0)


def _half_window(length: int) -> int:
    # (1 + r^2)^-256 < cutoff  <=>  r > sqrt(cutoff^(-1/256) - 1)
    r = math.sqrt(WINDOW_CUTOFF ** (-1.0 / 256) - 1.0)
    return int(math.ceil(r * length)) + 1


def density_field(f: Signal, Nx: np.ndarray) -> dict:
    """``<<f 1_{N^-1(omega_P'^{p(1)})}>>_{1, I_P'}`` for every tile ``P'``.

    Returns ``dict k -> (2^max(k-1,0), 2^(L-k))`` indexed by parent band and position.
    """
    N, L = f.N, f.L
    Nx = _check_lattice(Nx, N)
    a = np.abs(f.samples)
    bins = np.mod(Nx, N)
    out = {}
    for k in range(L + 1):
        length = 1 << k
        P = 1 << (L - k)
        res = max(k - 1, 0)
        band = bins >> (L - res) if res > 0 else np.zeros(N, np.int64)
        h = _half_window(length)
        offs = np.arange(length // 2 - h, length // 2 + h + 1)
        d = (offs + 0.5 - length / 2) / length
        w = (1.0 + d * d) ** (-TAIL_EXPONENT / 2)
        x = (np.arange(P)[:, None] * length + offs[None, :]) % N
        vals = a[x] * w[None, :]
        idx = band[x] * P + np.arange(P)[:, None]
        acc = np.bincount(idx.ravel(), weights=vals.ravel(), minlength=_nbands(k) * P)
        out[k] = acc.reshape(_nbands(k), P) / length
    return out


def _upward_sup(D: dict, L: int) -> dict:
    """``U[k][b, l] = max D(P')`` over ``P'`` above ``(k, band b, l)`` in the tile order."""
    U = {L: D[L].copy()}
    for k in range(L - 1, -1, -1):
        up = U[k + 1]
        if _nbands(k + 1) != _nbands(k):
            up = np.maximum(up[0::2], up[1::2])
        up = np.repeat(up, 2, axis=1)
        U[k] = np.maximum(D[k], up)
    return U


def _parent_rows(k: int) -> np.ndarray:
    return np.arange(1 << k) >> 1 if k >= 2 else np.zeros(1 << k, np.int64)


def density(f: Signal, tiles: Mask | Iterable[Tile], Nx: np.ndarray, D: dict | None = None) -> float:
    """``sup_{P in tiles} sup_{P' >~ P} <<f 1_{N^-1(omega_P'^{p(1)})}>>_{1,I_P'}`` over the whole tiling."""
    L = f.L
    mask = tiles if isinstance(tiles, Mapping) else tiles_to_mask(L, tiles)
    D = density_field(f, Nx) if D is None else D
    U = _upward_sup(D, L)
    best = 0.0
    for k in range(L + 1):
        if mask[k].any():
            best = max(best, float(U[k][_parent_rows(k)][mask[k]].max()))
    return best


def density_bruteforce(f: Signal, tiles: Iterable[Tile], Nx: np.ndarray) -> float:
    """Oracle: enumerate every ``P'`` with ``P <~ P'`` and compute each tailed average directly."""
    from .signal import chi_weight
    from .wavepackets import iter_standard_tiles

    N, L = f.N, f.L
    bins = np.mod(_check_lattice(Nx, N), N)
    a = np.abs(f.samples)
    tiles = list(tiles)
    best = 0.0
    for Q in iter_standard_tiles(L):
        if not any(order_leq(P, Q, 1) for P in tiles):
            continue
        par = parent_clamped(Q.freq, 1)
        j = -par.scale
        sel = (bins >> (L - j)) == par.pos if j > 0 else np.ones(N, bool)
        chi = chi_weight(N, Q.space.left, Q.space.length, TAIL_EXPONENT)
        best = max(best, float(np.sum(a * sel * chi) / float(Q.space.length)))
    return best


# ---------------------------------------------------------------------------
# forest


def _top_of(L: int, k: int, b: int, l: int) -> Top:
    grid = tile_at(L, k, 0, l).space
    res = max(k - 1, 0)
    return Top(grid, Fraction(2 * b + 1, 2 ** (res + 1)))


@dataclass
class Forest:
    """Selected tops, per-tile labels and the residual collection.

    ``labels[k][m, l]`` is the index of the tree containing the tile, ``-1`` for
    the residual ``P_-`` and ``-2`` for tiles outside the input collection.
    """

    L: int
    delta: float
    tops: list  # (k, parent band, l)
    labels: dict
    constants: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tops)

    def residual_mask(self) -> Mask:
        return {k: v == -1 for k, v in self.labels.items()}

    def tree_mask(self, i: int) -> Mask:
        return {k: v == i for k, v in self.labels.items()}

    def trees(self) -> list[Tree]:
        out = []
        for i, (k, b, l) in enumerate(self.tops):
            out.append(Tree(_top_of(self.L, k, b, l), mask_to_tiles(self.L, self.tree_mask(i)), 1))
        return out

    def to_json(self) -> str:
        trees = []
        for i, (k, b, l) in enumerate(self.tops):
            top = _top_of(self.L, k, b, l)
            trees.append({
                "interval": f"0:{k}:{l}",
                "xi": str(top.xi),
                "members": [str(P) for P in mask_to_tiles(self.L, self.tree_mask(i))],
            })
        return json.dumps({
            "format": "tilebench-v1",
            "L": self.L,
            "delta": self.delta,
            "trees": trees,
            "residual": [str(P) for P in mask_to_tiles(self.L, self.residual_mask())],
            "constants": self.constants,
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        from .dyadic import parse_tile, standard_grids

        data = json.loads(text)
        L = int(data["L"])
        sg, fg = standard_grids(L)
        labels = {k: np.full((1 << k, 1 << (L - k)), -2, np.int64) for k in range(L + 1)}
        tops = []
        for i, t in enumerate(data["trees"]):
            _, k, l = (int(x) for x in t["interval"].split(":"))
            res = max(k - 1, 0)
            b = math.floor(Fraction(t["xi"]) * 2**res)
            tops.append((k, b, l))
            for s in t["members"]:
                _, kk, m, ll = tile_index(parse_tile(s, sg, fg))
                labels[kk][m, ll] = i
        for s in data["residual"]:
            _, kk, m, ll = tile_index(parse_tile(s, sg, fg))
            labels[kk][m, ll] = -1
        return cls(L, float(data["delta"]), tops, labels, dict(data.get("constants", {})))


def density_decomposition(f: Signal, tiles: Mask | Iterable[Tile], Nx: np.ndarray, delta: float,
                          D: dict | None = None, Mf: np.ndarray | None = None) -> Forest:
    """Density-increment sweep, largest scale first.

    At each scale every tile ``P'`` with density above ``delta`` that still
    dominates a remaining tile becomes a top ``(I_P', centre of omega_P'^{p(1)})``;
    the remaining tiles below it are swept into its tree, ties going to the
    lower frequency.  Removals only shrink later candidate sets, so one pass
    leaves a residual of density at most ``delta``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    L = f.L
    mask = tiles if isinstance(tiles, Mapping) else tiles_to_mask(L, tiles)
    D = density_field(f, Nx) if D is None else D
    labels = {k: np.where(mask[k], -1, -2).astype(np.int64) for k in range(L + 1)}
    tops: list = []
    for K in range(L, -1, -1):
        live = {k: (labels[k] == -1).astype(float) for k in range(L + 1)}
        R = max(K - 1, 0)
        cnt = _tree_reduce(live, L, K, 1, R, np.sum)
        off = (D[K] > delta) & (cnt > 0)
        if not off.any():
            continue
        # offender id per (band, position), numbered leftmost first then by frequency
        order = np.argwhere(off.T)  # rows (l, b)
        ids = np.full(off.shape, -1, np.int64)
        base = len(tops)
        for i, (l, b) in enumerate(order):
            ids[b, l] = base + i
            tops.append((K, int(b), int(l)))
        used = set()
        for k in range(K + 1):
            j = max(k - 1, 0)
            group = 1 << (R - j) if k >= 2 else 1 << R
            # first offender (lowest band) in each group of bands sharing the tile's parent
            g = ids.reshape(ids.shape[0] // group, group, ids.shape[1])
            hit = g >= 0
            first = np.where(hit.any(axis=1), np.take_along_axis(g, hit.argmax(axis=1)[:, None, :], 1)[:, 0, :], -1)
            rows = _parent_rows(k) if k >= 2 else np.zeros(1 << k, np.int64)
            cols = np.arange(1 << (L - k)) >> (K - k)
            owner = first[np.ix_(rows, cols)]
            take = (labels[k] == -1) & (owner >= 0)
            labels[k][take] = owner[take]
            used.update(np.unique(owner[take]).tolist())
        # offenders left without tiles are dropped and the rest renumbered
        keep = [i for i in range(base, len(tops)) if i in used]
        remap = {old: base + new for new, old in enumerate(keep)}
        tops[base:] = [tops[i] for i in keep]
        for k in range(L + 1):
            lab = labels[k]
            sel = lab >= base
            lab[sel] = np.vectorize(remap.get)(lab[sel]) if sel.any() else lab[sel]
    forest = Forest(L, float(delta), tops, labels)
    if Mf is None:
        Mf = maximal_function(f, 1.0)
    forest.constants["tops_packing"] = tops_packing_constant(forest, Mf)
    return forest


def tops_packing_constant(forest: Forest, Mf: np.ndarray) -> float:
    """``max_J delta |J|^-1 sum_{I_T in J} |I_T| / inf_J M_1 f`` over all dyadic ``J``."""
    L = forest.L
    counts = {k: np.zeros(1 << (L - k)) for k in range(L + 1)}
    for k, _, l in forest.tops:
        counts[k][l] += 1.0
    # mass[K][l] = sum over tops inside J = (K, l) of |I_T|
    best = 0.0
    acc = np.zeros(1 << L)
    for K in range(L + 1):
        if K > 0:
            acc = acc.reshape(-1, 2).sum(axis=1)
        acc = acc + counts[K] * float(1 << K)
        inf = scale_inf(Mf, K)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(acc > 0, forest.delta * acc / float(1 << K) / inf, 0.0)
        best = max(best, float(r.max()))
    return best


# ---------------------------------------------------------------------------
# packing of incomparable tiles


@dataclass
class PackingReport:
    ok: bool
    ratio: float  # delta * sum |I_P| / (|J| inf_J M f)
    constant: float
    k_of: dict  # tile -> k_P
    selected: dict  # k -> list of P*
    parts: dict  # P* -> list of tiles
    claims: list  # violated structural claims (empty when the proof's steps hold)

    def __bool__(self) -> bool:
        return self.ok


def _dilate(I: DyadicInterval, k: int, N: int) -> tuple[float, float]:
    """Centre and half-length of ``2^k I`` (capped at the torus)."""
    c = float(I.center)
    h = min(float(I.length) * 2.0 ** (k - 1), N / 2)
    return c, h


def _arcs_meet(a, b, N: int) -> bool:
    d = abs(a[0] - b[0]) % N
    d = min(d, N - d)
    return d < a[1] + b[1] or a[1] + b[1] >= N / 2


def _window_mass(a: np.ndarray, sel: np.ndarray, c: float, h: float) -> float:
    N = a.size
    if h >= N / 2:
        return float(np.sum(a * sel))
    x = np.arange(N) + 0.5
    d = np.abs(x - c) % N
    d = np.minimum(d, N - d)
    return float(np.sum(a * sel * (d < h)))


def incomparable_packing_check(tiles: Iterable[Tile], f: Signal, Nx: np.ndarray, delta: float,
                               J: DyadicInterval, constant: float = 256.0,
                               Mf: np.ndarray | None = None) -> PackingReport:
    """Check ``sum |I_P| <= C delta^-1 |J| inf_J M f`` for a pairwise incomparable family.

    Also runs the stratified selection from the argument: each tile gets the
    least ``k_P`` with ``int_{2^k I_P cap N^-1(omega_P^{p(1)})} |f| >= 2^{6k} delta |I_P|``;
    within each stratum boxes ``2^k I x omega^{p(1)}`` are picked largest scale
    first while disjoint from earlier picks, and every tile is attached to the
    first pick whose box meets its own and whose scale is at least its own.
    """
    tiles = sorted(set(tiles), key=lambda P: (-P.space.scale, P.space.left, P.freq.left))
    N, L = f.N, f.L
    for i, P in enumerate(tiles):
        if not contains(J, P.space):
            raise ValueError(f"tile {P} is not inside J")
        for Q in tiles[i + 1:]:
            if order_leq(P, Q, 1) or order_leq(Q, P, 1):
                raise ValueError(f"tiles {P} and {Q} are comparable")
    Mf = maximal_function(f, 1.0) if Mf is None else Mf
    lo = int(J.left)
    infJ = float(Mf[lo:lo + int(J.length)].min())
    total = sum(float(P.space.length) for P in tiles)
    ratio = delta * total / (float(J.length) * infJ) if total else 0.0
    a = np.abs(f.samples)
    bins = np.mod(_check_lattice(Nx, N), N)
    k_of: dict = {}
    sel_of: dict = {}
    for P in tiles:
        par = parent_clamped(P.freq, 1)
        j = -par.scale
        sel = (bins >> (L - j)) == par.pos if j > 0 else np.ones(N, bool)
        sel_of[P] = sel
        k = 0
        while True:
            c, h = _dilate(P.space, k, N)
            if _window_mass(a, sel, c, h) >= 2.0 ** (6 * k) * delta * float(P.space.length):
                k_of[P] = k
                break
            if h >= N / 2:
                raise ValueError(f"tile {P} does not meet the density premise")
            k += 1
    selected: dict = {}
    parts: dict = {}
    claims: list = []

    def box_meet(P, Q, k):
        return _arcs_meet(_dilate(P.space, k, N), _dilate(Q.space, k, N), N) and (
            contains(parent_clamped(P.freq, 1), parent_clamped(Q.freq, 1))
            or contains(parent_clamped(Q.freq, 1), parent_clamped(P.freq, 1)))

    for k in sorted(set(k_of.values())):
        A = [P for P in tiles if k_of[P] == k]
        B: list = []
        for P in A:  # already in scale-descending order
            if all(not box_meet(P, Q, k) for Q in B):
                B.append(P)
        selected[k] = B
        for P in A:
            owner = next((Q for Q in B if box_meet(P, Q, k) and P.space.scale <= Q.space.scale), None)
            if owner is None:
                claims.append(f"k={k}: tile {P} not attached to any selected box")
                continue
            parts.setdefault(owner, []).append(P)
        for Q in B:
            group = parts.get(Q, [])
            for i, P in enumerate(group):
                for R in group[i + 1:]:
                    if P.space == R.space or contains(P.space, R.space) or contains(R.space, P.space):
                        claims.append(f"k={k}: intervals of {P} and {R} overlap under {Q}")
            c, h = _dilate(Q.space, k + 2, N)
            for P in group:
                pc, ph = _dilate(P.space, 0, N)
                d = abs(pc - c) % N
                d = min(d, N - d)
                if d + ph > h + 1e-9 and h < N / 2:
                    claims.append(f"k={k}: {P} leaves 2^(k+2) I of {Q}")
        # selected windows are pairwise disjoint by construction; their masses add up
    ok = ratio <= constant and not claims
    return PackingReport(ok, ratio, constant, k_of, selected, parts, claims)
