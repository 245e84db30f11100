"""Exact dyadic grids, intervals, tiles and the tile orders.

Intervals of the shifted grids

    D_g = { 2^k (l + g(-1)^k / 3 + [0, 1)) : k, l integers },   g = 0, 1, 2

are stored by integer indices ``(g, k, l)``; all geometric quantities are
exact :class:`fractions.Fraction` values.  A grid carries scale bounds
``(k_min, k_max)``; the working domain is the torus ``[0, 2^k_max)`` and
positions are reduced modulo the number of intervals at each scale.  For
``g = 0`` no interval wraps around the torus.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

__all__ = [
    "DyadicGrid",
    "DyadicInterval",
    "Tile",
    "ScaleError",
    "parent",
    "parent_clamped",
    "children",
    "sibling",
    "contains",
    "intersects",
    "order_leq",
    "order_leq_prime",
    "ShiftedFamily",
    "shifted_cover",
    "parse_interval",
    "parse_tile",
    "standard_grids",
    "tile_at",
    "selection_key",
    "grid_violations",
]


class ScaleError(ValueError):
    """Raised when a parent/child operation leaves the scale bounds."""


def _sign(k: int) -> int:
    return -1 if k % 2 else 1


@dataclass(frozen=True)
class DyadicGrid:
    """Shifted dyadic grid ``D_g`` truncated to scales ``k_min..k_max``."""

    shift: int = 0
    k_min: int = 0
    k_max: int = 0

    def __post_init__(self) -> None:
        if self.shift not in (0, 1, 2):
            raise ValueError("shift class must be 0, 1 or 2")
        if self.k_min > self.k_max:
            raise ValueError("k_min exceeds k_max")

    @property
    def torus_length(self) -> Fraction:
        return Fraction(2) ** self.k_max

    def count(self, k: int) -> int:
        """Number of intervals of scale ``k`` on the torus."""
        self._check(k)
        return 1 << (self.k_max - k)

    def offset(self, k: int) -> Fraction:
        return Fraction(self.shift * _sign(k), 3)

    def _check(self, k: int) -> None:
        if not self.k_min <= k <= self.k_max:
            raise ScaleError(f"scale {k} outside [{self.k_min}, {self.k_max}]")

    def interval(self, k: int, l: int) -> "DyadicInterval":
        self._check(k)
        return DyadicInterval(self, k, l % self.count(k))

    def intervals(self, k: int) -> list["DyadicInterval"]:
        return [DyadicInterval(self, k, l) for l in range(self.count(k))]

    def locate(self, x: Fraction | int | float, k: int) -> "DyadicInterval":
        """The scale-``k`` interval containing the torus point ``x``."""
        self._check(k)
        x = Fraction(x) % self.torus_length
        l = math.floor(x / Fraction(2) ** k - self.offset(k))
        return self.interval(k, l)


@dataclass(frozen=True, order=True)
class DyadicInterval:
    grid: DyadicGrid
    scale: int
    pos: int

    @property
    def length(self) -> Fraction:
        return Fraction(2) ** self.scale

    @property
    def left(self) -> Fraction:
        """Left endpoint reduced to ``[0, torus)``."""
        raw = self.length * (self.pos + self.grid.offset(self.scale))
        return raw % self.grid.torus_length

    @property
    def right(self) -> Fraction:
        return self.left + self.length

    @property
    def center(self) -> Fraction:
        return self.left + self.length / 2

    @property
    def wraps(self) -> bool:
        return self.right > self.grid.torus_length

    def pieces(self) -> list[tuple[Fraction, Fraction]]:
        """The interval as at most two half-open pieces of ``[0, torus)``."""
        a, b, t = self.left, self.right, self.grid.torus_length
        if b <= t:
            return [(a, b)]
        return [(a, t), (Fraction(0), b - t)]

    def __contains__(self, x: object) -> bool:
        x = Fraction(x) % self.grid.torus_length
        return any(a <= x < b for a, b in self.pieces())

    def __str__(self) -> str:
        return f"{self.grid.shift}:{self.scale}:{self.pos}"


def parent(I: DyadicInterval, kappa: int = 1) -> DyadicInterval:
    """The ``kappa``-th parent of ``I``."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    g = I.grid
    if I.scale + kappa > g.k_max:
        raise ScaleError(f"parent of scale {I.scale} by {kappa} exceeds k_max={g.k_max}")
    k, l = I.scale, I.pos
    for _ in range(kappa):
        l = (l + g.shift * _sign(k)) >> 1
        k += 1
    return g.interval(k, l)


def parent_clamped(I: DyadicInterval, kappa: int = 1) -> DyadicInterval:
    """Like :func:`parent`, but stops at the top scale of the grid."""
    return parent(I, min(kappa, I.grid.k_max - I.scale))


def children(I: DyadicInterval, kappa: int = 1) -> list[DyadicInterval]:
    """The ``2^kappa`` descendants ``kappa`` scales below, ordered by center."""
    g = I.grid
    if I.scale - kappa < g.k_min:
        raise ScaleError(f"children of scale {I.scale} by {kappa} below k_min={g.k_min}")
    level = [(I.scale, I.pos)]
    for _ in range(kappa):
        nxt = []
        for k, l in level:
            base = 2 * l + g.shift * _sign(k)
            nxt.extend([(k - 1, base), (k - 1, base + 1)])
        level = nxt
    # positions grow with the center except across the torus seam
    out = [g.interval(k, l) for k, l in level]
    if I.wraps:
        return out
    return sorted(out, key=lambda J: J.left)


def sibling(I: DyadicInterval) -> DyadicInterval:
    a, b = children(parent(I, 1), 1)
    return b if a == I else a


def contains(J: DyadicInterval, I: DyadicInterval) -> bool:
    """``I`` is a subset of ``J`` (same grid)."""
    if I.grid != J.grid:
        raise ValueError("intervals from different grids")
    if I.scale > J.scale:
        return False
    return parent(I, J.scale - I.scale) == J


def intersects(I: DyadicInterval, J: DyadicInterval) -> bool:
    if I.scale <= J.scale:
        return contains(J, I)
    return contains(I, J)


_IV = re.compile(r"^\s*(\d+):(-?\d+):(-?\d+)\s*$")


def parse_interval(text: str, grid: DyadicGrid) -> DyadicInterval:
    m = _IV.match(text)
    if not m:
        raise ValueError(f"bad interval encoding {text!r}")
    g, k, l = map(int, m.groups())
    if g != grid.shift:
        raise ValueError(f"interval {text!r} is not in grid D_{grid.shift}")
    return grid.interval(k, l)


@dataclass(frozen=True, order=True)
class Tile:
    """Space-frequency tile ``I x omega`` with ``|I| |omega| = 1``."""

    space: DyadicInterval
    freq: DyadicInterval

    def __post_init__(self) -> None:
        if self.space.length * self.freq.length != 1:
            raise ValueError(f"tile {self} violates |I||omega| = 1")

    @property
    def scl(self) -> Fraction:
        return self.space.length

    def __str__(self) -> str:
        return f"{self.space}|{self.freq}"


def parse_tile(text: str, space_grid: DyadicGrid, freq_grid: DyadicGrid) -> Tile:
    a, _, b = text.partition("|")
    return Tile(parse_interval(a, space_grid), parse_interval(b, freq_grid))


def standard_grids(L: int, shift: int = 0) -> tuple[DyadicGrid, DyadicGrid]:
    """Dual pair for a length ``2^L`` sample torus: space ``[0, 2^L)``, frequency ``[0, 1)``."""
    return DyadicGrid(shift, 0, L), DyadicGrid(shift, -L, 0)


def tile_at(L: int, k: int, m: int, l: int) -> Tile:
    """Tile of spatial scale ``2^k``, frequency band ``m`` and position ``l`` in the standard grids."""
    sg, fg = standard_grids(L)
    return Tile(sg.interval(k, l), fg.interval(-k, m))


def selection_key(I: DyadicInterval) -> tuple:
    """Deterministic tie-break: larger scale first, then smaller left endpoint."""
    return (-I.scale, I.left)


def order_leq(P: Tile, Q: Tile, kappa: int = 1) -> bool:
    """``P <=_kappa Q``: ``I_P`` inside ``I_Q`` and ``omega_Q^p(kappa)`` inside ``omega_P^p(kappa)``."""
    if not contains(Q.space, P.space):
        return False
    wq = parent_clamped(Q.freq, kappa)
    wp = parent_clamped(P.freq, kappa)
    return contains(wp, wq)


def order_leq_prime(P: Tile, Q: Tile, kappa: int) -> bool:
    return order_leq(P, Q, kappa) and not order_leq(P, Q, 1)


# ---------------------------------------------------------------------------
# auxiliary grids for near-optimal covers of arbitrary intervals


@dataclass(frozen=True)
class ShiftedFamily:
    """A finite family of dyadic grids on the real line.

    Grid ``j = a * 2^W + c`` has ratio ``rho_a = 1 + a / 2^(M+2)`` and the
    binary shift sequence ``beta_i = bit (i mod W) of c``; its scale-``k``
    intervals are ``rho_a 2^k (l + phi_c(k) + [0, 1))`` with
    ``phi_c(k) = sum_{m >= 1} beta_{k-m} 2^-m``, a rational with period-``W``
    binary expansion.  Consecutive scales nest because
    ``2 phi_c(k+1) - phi_c(k) = beta_k`` is an integer.
    """

    M: int

    @property
    def W(self) -> int:
        return self.M + 2

    @property
    def n_rho(self) -> int:
        return 1 << (self.M + 2)

    @property
    def size(self) -> int:
        return self.n_rho << self.W

    def rho(self, a: int) -> Fraction:
        return 1 + Fraction(a, self.n_rho)

    def window(self, c: int, k: int) -> int:
        W = self.W
        v = 0
        for m in range(1, W + 1):
            v = 2 * v + ((c >> ((k - m) % W)) & 1)
        return v

    def phi(self, c: int, k: int) -> Fraction:
        return Fraction(self.window(c, k), (1 << self.W) - 1)

    def interval(self, j: int, k: int, l: int) -> tuple[Fraction, Fraction]:
        a, c = divmod(j, 1 << self.W)
        length = self.rho(a) * Fraction(2) ** k
        left = length * (l + self.phi(c, k))
        return left, left + length

    def code_for_window(self, v: int, k: int) -> int:
        """A shift code ``c`` whose window at scale ``k`` equals ``v``."""
        W = self.W
        c = 0
        for m in range(1, W + 1):
            if (v >> (W - m)) & 1:
                c |= 1 << ((k - m) % W)
        return c


def shifted_cover(lo, hi, M: int, torus: Fraction | int | None = None) -> tuple[int, tuple[Fraction, Fraction]]:
    """Cover ``[lo, hi)`` by one interval of a :class:`ShiftedFamily` grid.

    Returns ``(j, (left, right))`` with ``[lo, hi)`` inside the interval and
    length at most ``(1 + 2^-M) (hi - lo)``.  Among admissible answers the
    shortest is returned, ties broken by the smallest grid index.
    """
    lo, hi = Fraction(lo), Fraction(hi)
    ell = hi - lo
    if ell <= 0:
        raise ValueError("empty interval")
    if torus is not None and ell > Fraction(torus):
        raise ValueError("interval longer than the torus")
    fam = ShiftedFamily(M)
    nw = (1 << fam.W) - 1
    best = None
    for a in range(fam.n_rho):
        rho = fam.rho(a)
        k = math.ceil(math.log2(ell / rho)) - 1
        while rho * Fraction(2) ** k < ell:
            k += 1
        for kk in (k, k + 1):
            length = rho * Fraction(2) ** kk
            # need l + phi in [hi/length - 1, lo/length]
            x0 = hi / length - 1
            slack = (length - ell) / length
            t = x0 - math.floor(x0)
            v = math.ceil(t * nw)
            if Fraction(v, nw) - t > slack:
                continue
            phi = Fraction(v, nw)
            left = length * (math.floor(lo / length - phi) + phi)
            if hi > left + length:
                continue
            c = fam.code_for_window(v, kk)
            j = (a << fam.W) + c
            key = (length, j)
            if best is None or key < best[0]:
                best = (key, j, (left, left + length))
            break
    assert best is not None, "shifted cover must exist"
    assert best[2][1] - best[2][0] <= (1 + Fraction(1, 2**M)) * ell
    return best[1], best[2]


def grid_violations(g: DyadicGrid) -> tuple[int, int]:
    """``(pairs, violations)``: pairs of intervals that are neither nested nor disjoint.

    Intervals are compared as point sets on the lattice ``(j + 1/2)/3``, which
    separates every endpoint of the three shifted grids; containment must
    also agree with :func:`contains`.
    """
    ivs = [g.interval(k, l) for k in range(g.k_min, g.k_max + 1) for l in range(g.count(k))]
    sets = []
    for I in ivs:
        bits = 0
        for a, b in I.pieces():
            lo, hi = math.ceil(3 * a - Fraction(1, 2)), math.ceil(3 * b - Fraction(1, 2))
            bits |= ((1 << (hi - lo)) - 1) << lo
        sets.append(bits)
    bad = pairs = 0
    for i in range(len(ivs)):
        for j in range(i + 1, len(ivs)):
            pairs += 1
            a, b = sets[i], sets[j]
            inter = a & b
            if inter not in (0, a, b):
                bad += 1
                continue
            I, J = (ivs[i], ivs[j]) if ivs[i].scale <= ivs[j].scale else (ivs[j], ivs[i])
            small = sets[i] if I is ivs[i] else sets[j]
            if contains(J, I) != (inter == small):
                bad += 1
    return pairs, bad


def iter_tiles(L: int, scales: range | None = None) -> Iterator[Tile]:
    """All tiles of the standard length-``2^L`` tiling, larger scales first."""
    for k in scales if scales is not None else range(L, -1, -1):
        for l in range(1 << (L - k)):
            for m in range(1 << k):
                yield tile_at(L, k, m, l)
