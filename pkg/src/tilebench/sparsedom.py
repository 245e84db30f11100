"""Stopping-time construction and sparse domination checks for the Carleson model form.

Pipeline for ``0 < eps <= 1/2`` with ``q = (1/(1-eps), 1)``:

1. ``stopping_collection`` builds the stopping intervals ``S`` from a
   partition ``Q`` of the torus, their children ``B(S)`` and the sets ``E_S``.
2. Tiles are assigned to the deepest ``S`` containing ``I_P``.
3. ``sparse_check`` compares ``eps * C_P(f1, f2)`` with ``||M_q(f1, f2)||_1``
   and records the constants of every intermediate step.

All intervals live on the standard grid of the sample torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dyadic import DyadicGrid, DyadicInterval, Tile
from .signal import HALF_LINE, Signal, carleson_max, maximal_function, sparse_products
from .treespace import Size, dense_lorentz, dense_x_norm, dense_x_profile, dense_y_norm, x_from_profile
from .wavepackets import (
    DEFAULT_SPEC,
    TileField,
    WaveletSpec,
    local_tile_norm,
    scale_inf,
    transform_A_all,
    transform_W_all,
)

__all__ = [
    "THETA_GRID",
    "PackingError",
    "sparse_maximal",
    "sparse_maximal_bruteforce",
    "SparseCollection",
    "stopping_collection",
    "stopping_collection_q",
    "localize",
    "SparseReport",
    "sparse_check",
    "sparse_ratio",
    "embedding_ratios",
    "embedding_curve",
]

THETA_GRID = (2.0, 4.0, 8.0, 16.0, 32.0)


class PackingError(RuntimeError):
    """The quarter packing of stopping children failed at every admissible threshold."""


# ---------------------------------------------------------------------------
# sparse maximal function


def _arrays(fs) -> list[np.ndarray]:
    return [np.abs(f.samples if isinstance(f, Signal) else np.asarray(f)).astype(float) for f in fs]


def sparse_maximal(fs: Sequence, ps: Sequence[float]) -> tuple[np.ndarray, float]:
    """Pointwise ``M_p(f_1, ..., f_n)`` over the three shifted grids, and its L^1 norm."""
    if len(fs) < 2 or len(fs) != len(ps):
        raise ValueError("need at least two functions and one exponent each")
    if any(p <= 0 for p in ps):
        raise ValueError("exponents must be positive")
    M = sparse_products(fs, ps)
    return M, float(M.sum())


def sparse_maximal_bruteforce(fs: Sequence, ps: Sequence[float], grids: Sequence[int] = (0, 1, 2)) -> np.ndarray:
    """Direct enumeration of every interval of the shifted grids; for small ``N``."""
    arrs = _arrays(fs)
    N = arrs[0].size
    L = N.bit_length() - 1
    out = np.zeros(N)
    for g in grids:
        grid = DyadicGrid(g, 0, L)
        for k in range(L + 1):
            for l in range(-2, (N >> k) + 2):
                I = grid.interval(k, l)
                lo = math.ceil(I.left)
                idx = np.arange(lo, lo + (1 << k)) % N
                if lo >= N or lo + (1 << k) <= 0:
                    continue
                val = 1.0
                for a, p in zip(arrs, ps):
                    val *= (np.sum(a[idx] ** p) / (1 << k)) ** (1 / p)
                out[idx] = np.maximum(out[idx], val)
    return out


# ---------------------------------------------------------------------------
# stopping collection


def _triple(S: DyadicInterval, N: int) -> np.ndarray:
    a, l = int(S.left), int(S.length)
    if 3 * l >= N:
        return np.arange(N)
    return np.arange(a - l, a + 2 * l) % N


def _avg(a: np.ndarray, idx: np.ndarray, q: float) -> float:
    return float(np.mean(a[idx] ** q) ** (1 / q))


def _maximal_blocks(inside: np.ndarray, S: DyadicInterval) -> list[tuple[int, int]]:
    """Maximal dyadic ``(scale, pos)`` below ``S`` whose samples all lie in ``inside``."""
    a, k0 = int(S.left), S.scale
    seg = inside[a:a + (1 << k0)]
    out = []
    taken = np.zeros(1, bool)
    for k in range(k0, -1, -1):
        if k < k0:
            taken = np.repeat(taken, 2)
        full = seg.reshape(-1, 1 << k).all(axis=1) & ~taken
        out.extend((k, (a >> k) + int(i)) for i in np.flatnonzero(full))
        taken |= full
    return out


@dataclass
class SparseCollection:
    """Stopping intervals with generations, children, and the sets ``E_S``.

    ``owner`` maps each sample to the index of the ``S`` whose ``E_S`` holds it.
    """

    L: int
    q: tuple
    theta: float
    intervals: list
    generation: list
    parent: list
    children: list
    owner: np.ndarray
    checks: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def depth(self) -> int:
        return max(self.generation) if self.generation else 0

    def e_size(self, i: int) -> int:
        return int(np.sum(self.owner == i))

    def to_json(self) -> dict:
        return {
            "L": self.L,
            "q": list(self.q),
            "theta": self.theta,
            "intervals": [[S.scale, S.pos] for S in self.intervals],
            "generation": self.generation,
            "parent": self.parent,
            "checks": self.checks,
        }


def _build(arrs, q, Q_partition, theta, L) -> tuple[SparseCollection, float]:
    N = 1 << L
    grid = Q_partition[0].grid
    intervals, gen, par, ch = [], [], [], []
    owner = np.full(N, -1, np.int64)
    worst = 0.0
    stack = [(Q, 0, -1) for Q in Q_partition]
    while stack:
        S, m, up = stack.pop(0)
        i = len(intervals)
        intervals.append(S)
        gen.append(m)
        par.append(up)
        ch.append([])
        if up >= 0:
            ch[up].append(i)
        t = _triple(S, N)
        inside = np.zeros(N, bool)
        for a, qj in zip(arrs, q):
            avg = _avg(a, t, qj)
            if avg == 0:
                continue
            g = np.zeros(N)
            g[t] = a[t]
            inside |= maximal_function(g, qj) > theta * avg
        blocks = _maximal_blocks(inside, S)
        covered = sum(1 << k for k, _ in blocks)
        worst = max(worst, covered / float(S.length))
        if covered > S.length / 4:
            return None, worst
        lo = int(S.left)
        seg = owner[lo:lo + int(S.length)]
        seg[:] = i
        for k, l in blocks:
            stack.append((grid.interval(k, l), m + 1, i))
    return SparseCollection(L, tuple(q), theta, intervals, gen, par, ch, owner), worst


def stopping_collection(f1, f2, Q_partition: Sequence[DyadicInterval] | None = None, eps: float = 0.5,
                        Theta: float | None = None) -> SparseCollection:
    """Iterated stopping intervals for ``q = (1/(1-eps), 1)``.

    With ``Theta=None`` the smallest value of :data:`THETA_GRID` giving the
    quarter packing at every node is used.
    """
    if not 0 < eps <= 0.5:
        raise ValueError("need 0 < eps <= 1/2")
    return stopping_collection_q((f1, f2), (1.0 / (1.0 - eps), 1.0), Q_partition, Theta)


def stopping_collection_q(fs: Sequence, q: Sequence[float], Q_partition: Sequence[DyadicInterval] | None = None,
                          Theta: float | None = None) -> SparseCollection:
    """Same construction for any number of functions and exponents ``q``."""
    if len(fs) != len(q) or not fs:
        raise ValueError("one exponent per function")
    if any(qj < 1 for qj in q):
        raise ValueError("exponents must be at least 1")
    arrs = _arrays(fs)
    N = arrs[0].size
    L = N.bit_length() - 1
    grid = DyadicGrid(0, 0, L)
    if Q_partition is None:
        Q_partition = [grid.interval(L, 0)]
    _check_partition(Q_partition, arrs, N)
    q = tuple(float(x) for x in q)
    thetas = THETA_GRID if Theta is None else (float(Theta),)
    worst = 0.0
    for th in thetas:
        col, w = _build(arrs, q, list(Q_partition), th, L)
        worst = w
        if col is not None:
            col.checks = collection_checks(col, arrs)
            return col
    raise PackingError(f"quarter packing fails at Theta={thetas[-1]:g}: children cover {worst:.3f} of a parent")


def _check_partition(Qs: Sequence[DyadicInterval], arrs, N: int) -> None:
    cover = np.zeros(N, int)
    for Q in Qs:
        cover[int(Q.left):int(Q.left) + int(Q.length)] += 1
    if np.any(cover != 1):
        raise ValueError("Q_partition must partition the torus")
    for Q in Qs:
        t = np.zeros(N, bool)
        t[_triple(Q, N)] = True
        if any(np.any(a[~t] != 0) for a in arrs):
            raise ValueError("supports must lie in 3Q for every Q")


def collection_checks(col: SparseCollection, arrs: Sequence[np.ndarray]) -> dict:
    """Disjointness, ``|S| <= 2|E_S|``, packing and the stopping constants.

    ``stopping_const[j]`` is ``max_S max_{x in E_S} M_q f_j(x) / <f_j>_{q,3S}``;
    singletons of ``E_S`` realize the sup over intervals ``I`` of ``S`` not
    inside the children.  Nodes where ``f_j`` vanishes on ``3S`` but ``M_q f_j``
    does not vanish on ``E_S`` have no finite constant; they are counted in
    ``degenerate`` and left out of the max.  ``local_stopping_const`` uses
    ``M_q[f_j 1_{3S}]`` and is at most ``Theta`` by construction.
    """
    N = 1 << col.L
    Mq = [maximal_function(a, qj) for a, qj in zip(arrs, col.q)]
    # each sample lies in at most one E_S by construction of owner; recount directly
    counts = np.zeros(N, int)
    e_min = math.inf
    pack = 0.0
    n = len(arrs)
    stop = [0.0] * n
    local = [0.0] * n
    degenerate = [0] * n
    for i, S in enumerate(col.intervals):
        lo, l = int(S.left), int(S.length)
        kids = np.zeros(N, bool)
        for c in col.children[i]:
            B = col.intervals[c]
            kids[int(B.left):int(B.left) + int(B.length)] = True
        E = np.zeros(N, bool)
        E[lo:lo + l] = True
        E &= ~kids
        counts += E
        e_min = min(e_min, E.sum() / l)
        pack = max(pack, kids.sum() / l)
        t = _triple(S, N)
        for j, (a, qj) in enumerate(zip(arrs, col.q)):
            avg = _avg(a, t, qj)
            g = np.zeros(N)
            g[t] = a[t]
            top = float(Mq[j][E].max()) if E.any() else 0.0
            loc = float(maximal_function(g, qj)[E].max()) if E.any() else 0.0
            if avg > 0:
                stop[j] = max(stop[j], top / avg)
                local[j] = max(local[j], loc / avg)
            elif top > 0:
                degenerate[j] += 1
    return {
        "disjoint": bool(counts.max() <= 1),
        "covers": bool(counts.min() >= 1),
        "min_E_ratio": float(e_min),
        "packing": float(pack),
        "stopping_const": stop,
        "local_stopping_const": local,
        "degenerate": degenerate,
        "nodes": len(col),
        "depth": col.depth,
    }


# ---------------------------------------------------------------------------
# localization of tile fields


def localize(F: TileField, S: DyadicInterval) -> TileField:
    """Restriction of ``F`` to tiles with ``I_P`` inside ``S``, as a field on the sub-torus ``S``."""
    k0, l0 = S.scale, S.pos
    out = {}
    for k in range(k0 + 1):
        w = 1 << (k0 - k)
        out[k] = F.arrays[k][:, l0 * w:(l0 + 1) * w].copy()
    return TileField(k0, out)


def _owner_masks(col: SparseCollection, L: int) -> dict:
    """``k -> (2^(L-k),)`` index of the deepest ``S`` containing each scale-``k`` interval, or -1."""
    out = {k: np.full(1 << (L - k), -1, np.int64) for k in range(L + 1)}
    order = sorted(range(len(col)), key=lambda i: col.generation[i])
    for i in order:
        S = col.intervals[i]
        for k in range(S.scale + 1):
            w = 1 << (S.scale - k)
            out[k][S.pos * w:(S.pos + 1) * w] = i
    return out


def _mask_from(tiles, L: int) -> dict:
    from .selection import full_mask, tiles_to_mask

    if tiles is None:
        return full_mask(L)
    if isinstance(tiles, Mapping):
        return tiles
    return tiles_to_mask(L, tiles)


# ---------------------------------------------------------------------------
# sparse ratio


@dataclass
class SparseReport:
    eps: float
    ratio: float
    form: float
    maximal_l1: float
    collection: SparseCollection
    cons: list
    sparse_sum: float
    cons_degenerate: list = field(default_factory=lambda: [0, 0])
    per_S: list = field(default_factory=list)

    def row(self) -> dict:
        c = self.collection
        return {
            "eps": self.eps,
            "ratio": self.ratio,
            "generations": c.depth + 1,
            "theta": c.theta,
            "nodes": len(c),
        }


def sparse_check(f1: Signal, f2: Signal, eps: float, tiles: Iterable[Tile] | Mapping | None = None,
                 Nx: np.ndarray | None = None, Theta: float | None = None, detail: bool = False,
                 spec: WaveletSpec = DEFAULT_SPEC, W: TileField | None = None, A: TileField | None = None) -> SparseReport:
    """Run the stopping pipeline for one ``eps``.

    ``Nx`` defaults to the linearization of the half-line Carleson maximal
    function of ``f1``.  With ``detail`` the localized X and Y norms of every
    ``S`` are computed as well (slow).
    """
    if not 0 < eps <= 0.5:
        raise ValueError("need 0 < eps <= 1/2")
    arrs = _arrays((f1, f2))
    if not arrs[0].any() or not arrs[1].any():
        raise ValueError("zero denominator: f1 or f2 vanishes")
    L = f1.L
    mask = _mask_from(tiles, L)
    if Nx is None:
        Nx = carleson_max(f1, HALF_LINE)[1]
    W = transform_W_all(f1, spec) if W is None else W
    A = transform_A_all(f2, Nx, spec) if A is None else A
    col = stopping_collection(f1, f2, None, eps, Theta)
    owner = _owner_masks(col, L)
    q = col.q
    n = len(col)
    form_S = np.zeros(n)
    for k in range(L + 1):
        prod = np.where(mask[k], W.arrays[k] * A.arrays[k], 0.0).sum(axis=0) * float(1 << k)
        ok = owner[k] >= 0
        form_S += np.bincount(owner[k][ok], weights=prod[ok], minlength=n)
    form = float(form_S.sum())
    Mvec, ml1 = sparse_maximal((f1, f2), q)
    # [f_j]_{q_j, P(S)} <= C <f_j>_{q_j, 3S}
    N = 1 << L
    loc = np.zeros((2, n))
    for j, (a, qj) in enumerate(zip(arrs, q)):
        Mq = maximal_function(a, qj)
        for k in range(L + 1):
            used = mask[k].any(axis=0) & (owner[k] >= 0)
            if not used.any():
                continue
            vals = scale_inf(Mq, k)
            np.maximum.at(loc[j], owner[k][used], vals[used])
    cons = [0.0, 0.0]
    cons_degenerate = [0, 0]
    sparse_sum = 0.0
    for i, S in enumerate(col.intervals):
        t = _triple(S, N)
        for j, (a, qj) in enumerate(zip(arrs, q)):
            avg = _avg(a, t, qj)
            if loc[j, i] > 0:
                if avg > 0:
                    cons[j] = max(cons[j], float(loc[j, i] / avg))
                else:
                    cons_degenerate[j] += 1
        E = col.owner == i
        if E.any():
            sparse_sum += float(E.sum()) * float(Mvec[E].min())
    rep = SparseReport(eps, eps * form / ml1, form, ml1, col, cons, sparse_sum, cons_degenerate)
    if detail:
        for i, S in enumerate(col.intervals):
            own = {k: mask[k] & (owner[k] == i)[None, :] for k in range(L + 1)}
            Wl = localize(TileField(L, {k: np.where(own[k], W.arrays[k], 0.0) for k in own}), S)
            Al = localize(TileField(L, {k: np.where(own[k], A.arrays[k], 0.0) for k in own}), S)
            X = dense_x_norm(Wl, Size("2*"), 2.0 / eps, 2.0)
            Y = dense_y_norm(Al, Size("C"), 1.0)
            size = float(S.length)
            rep.per_S.append({
                "S": str(S),
                "form": float(form_S[i]),
                "X": X,
                "Y": Y,
                "holder_ratio": float(form_S[i]) / (size * X * Y) if X * Y > 0 else 0.0,
            })
    return rep


def sparse_ratio(P_set, f1: Signal, f2: Signal, eps: float, N: np.ndarray | None = None, **kw) -> float:
    """``eps * C_P(f1, f2) / ||M_{(1/(1-eps), 1)}(f1, f2)||_1``."""
    return sparse_check(f1, f2, eps, P_set, N, **kw).ratio


# ---------------------------------------------------------------------------
# embedding ratios


def _embedding_field(f: Signal, P_set, J, kind: str, Nx, spec: WaveletSpec, F: TileField | None):
    from .selection import mask_to_tiles

    L = f.L
    mask = _mask_from(P_set, L)
    if J is not None:
        w = {k: np.zeros_like(mask[k]) for k in mask}
        for k in range(J.scale + 1):
            s = 1 << (J.scale - k)
            w[k][:, J.pos * s:(J.pos + 1) * s] = mask[k][:, J.pos * s:(J.pos + 1) * s]
        mask = w
    tiles = mask_to_tiles(L, mask)
    if not tiles or not np.any(f.samples):
        return None, tiles
    if F is None:
        if kind.startswith("W"):
            F = transform_W_all(f, spec)
        else:
            F = transform_A_all(f, carleson_max(f, HALF_LINE)[1] if Nx is None else Nx, spec)
    FP = TileField(L, {k: np.where(mask[k], F.arrays[k], 0.0) for k in mask})
    if J is not None:
        FP = localize(FP, J)
    return FP, tiles


def embedding_ratios(f: Signal, P_set=None, J: DyadicInterval | None = None, p: float = 2.0, t: float = 2.0,
                     kind: str = "Wp", Nx: np.ndarray | None = None, kappa: int = 1,
                     spec: WaveletSpec = DEFAULT_SPEC, F: TileField | None = None) -> float:
    """Empirical LHS/RHS of one localized embedding on ``J`` (default: the torus).

    * ``W2``: ``||W[f] 1_P||_{Y^{2,inf}(size_2*)} / [f]_{2,P}``
    * ``Wp``: ``||W[f] 1_P||_{X_2^{tp',inf}(size_2*)} / [f]_{p,P}``
    * ``A1``: ``||A[f] 1_P||_{L^{p,inf}(size_C)} / [f]_{1,P}``
    * ``Ap``: ``||A[f] 1_P||_{Y^{p,inf}(size_C)} / [f]_{1,P}``

    ``F`` may pass a precomputed ``W[f]`` or ``A[f]`` field.
    """
    if kind == "Wp":
        return embedding_curve(f, [p], P_set, J, t, kappa, spec, F)[0]
    if kind not in ("W2", "A1", "Ap"):
        raise ValueError(f"unknown embedding kind {kind!r}")
    if p < 1 or t <= 1:
        raise ValueError("invalid exponents")
    FP, tiles = _embedding_field(f, P_set, J, kind, Nx, spec, F)
    if FP is None:
        return 0.0
    if kind == "W2":
        num = dense_y_norm(FP, Size("2*"), 2.0, kappa)
        den = local_tile_norm(f, tiles, 2.0)
    elif kind == "A1":
        num = dense_lorentz(FP, Size("C"), p, 1)
        den = local_tile_norm(f, tiles, 1.0)
    else:
        num = dense_y_norm(FP, Size("C"), p, 1)
        den = local_tile_norm(f, tiles, 1.0)
    return num / den if den > 0 else 0.0


def embedding_curve(f: Signal, ps: Sequence[float], P_set=None, J: DyadicInterval | None = None, t: float = 2.0,
                    kappa: int = 1, spec: WaveletSpec = DEFAULT_SPEC, F: TileField | None = None) -> list[float]:
    """``Wp`` ratios over a grid of ``p``, sharing one X-norm profile."""
    if t <= 1 or any(not 1 < p <= 2 for p in ps):
        raise ValueError("need t > 1 and 1 < p <= 2")
    FP, tiles = _embedding_field(f, P_set, J, "Wp", None, spec, F)
    if FP is None:
        return [0.0] * len(ps)
    prof = dense_x_profile(FP, Size("2*"), 2.0, kappa)
    out = []
    for p in ps:
        den = local_tile_norm(f, tiles, p)
        num = x_from_profile(prof, t * p / (p - 1), 2.0)
        out.append(num / den if den > 0 else 0.0)
    return out
