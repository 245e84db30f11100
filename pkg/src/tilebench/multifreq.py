"""Multi-frequency Calderon-Zygmund decomposition on minimal tiles.

The generator ``eta`` is the bump ``exp(1 - 1/(1 - x^2))`` on ``(-1, 1)``, so
``eta(0) = 1`` and ``eta`` vanishes at every nonzero integer.  For a CZ
interval ``G`` of length ``l`` the packets ``eta_P(z) = e(xi z) eta(z/l)/l``,
``xi in Z/l``, sum to the unit impulse, hence ``sum_P Pi_P f = f`` exactly on
the lattice.  Projections onto a set ``W`` of minimal tiles over one ``G`` are a
single convolution of ``f 1_G`` with ``eta(z/l)/l * U_W(z)``,
``U_W(z) = sum_{xi in W} e(xi z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dyadic import DyadicInterval, Tile, tile_at
from .signal import Signal, maximal_function
from .treespace import Size, Top, dense_tree_sizes
from .wavepackets import DEFAULT_SPEC, WaveletSpec, local_tile_norm, tile_index, transform_W_all

__all__ = [
    "eta",
    "CZFamily",
    "cz_intervals",
    "minimal_tiles",
    "project",
    "project_set",
    "Regions",
    "regions",
    "choice_K",
    "smoothness_M",
    "gb_split",
    "tile_count_bound",
]


def eta(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


# ---------------------------------------------------------------------------
# arcs on the sample torus


def _ivs(intervals) -> np.ndarray:
    """(left, length) float rows."""
    return np.array([[float(I.left), float(I.length)] for I in intervals]).reshape(-1, 2)


def _dilate(rows: np.ndarray, factor: float, N: int) -> np.ndarray:
    lam = np.minimum(factor * rows[:, 1], N)
    return np.stack([rows[:, 0] + rows[:, 1] / 2 - lam / 2, lam], axis=1)


def _contains(arcs: np.ndarray, rows: np.ndarray, N: int, tol: float = 1e-9) -> np.ndarray:
    """``[i, j]``: arc ``i`` contains interval ``j`` on the length-``N`` torus."""
    off = np.mod(rows[None, :, 0] - arcs[:, None, 0], N)
    off = np.where(off > N - tol, 0.0, off)
    inside = off + rows[None, :, 1] <= arcs[:, None, 1] + tol
    return inside | (arcs[:, None, 1] >= N)


def _disjoint(arcs: np.ndarray, rows: np.ndarray, N: int, tol: float = 1e-9) -> np.ndarray:
    a = np.mod(rows[None, :, 0] - arcs[:, None, 0], N)
    ok = (a >= arcs[:, None, 1] - tol) & (a + rows[None, :, 1] <= N + tol)
    return ok & (arcs[:, None, 1] < N)


def _circ(a: float) -> float:
    a = a % 1.0
    return min(a, 1.0 - a)


# ---------------------------------------------------------------------------
# CZ intervals


@dataclass
class CZFamily:
    """``CZ_K(J)`` on the standard spatial grid of a length-``2^L`` torus.

    Scale-0 intervals that are not admissible are still included so the
    family partitions the torus; they are listed in ``forced`` and excluded
    from the structural checks.
    """

    L: int
    K: float
    sources: tuple
    intervals: list
    forced: frozenset = frozenset()
    checks: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def to_csv(self) -> str:
        rows = ["# tilebench-v1", "interval,forced"]
        rows += [f"{G},{int(G in self.forced)}" for G in self.intervals]
        return "\n".join(rows) + "\n"


def _admissible_scale(k: int, src: np.ndarray, K: float, L: int) -> np.ndarray:
    """Admissibility of every standard interval at scale ``k``; ``src`` is (left, length) rows."""
    N = 1 << L
    ell = float(1 << k)
    lam = 9 * K * K * ell
    if lam >= N:
        return np.zeros(1 << (L - k), bool)
    left = np.arange(1 << (L - k)) * ell + ell / 2 - lam / 2
    off = np.mod(src[None, :, 0] - left[:, None], N)
    off = np.where(off > N - 1e-9, 0.0, off)
    inside = off + src[None, :, 1] <= lam + 1e-9
    return ~inside.any(axis=1)


def cz_intervals(sources: Iterable[DyadicInterval], K: float, L: int, check: bool = True,
                 h: np.ndarray | None = None) -> CZFamily:
    """Maximal dyadic ``G`` with ``9 K^2 G`` containing no source interval."""
    sources = tuple(sorted(set(sources), key=lambda I: (-I.scale, I.pos)))
    if not sources:
        raise ValueError("empty source family")
    if K < 1:
        raise ValueError("K must be at least 1")
    grid = sources[0].grid
    src = np.array([[float(J.left), float(J.length)] for J in sources])
    out: list = []
    forced: set = set()
    taken = np.zeros(1, bool)  # covered by a chosen ancestor, at the current scale
    for k in range(L, -1, -1):
        if k < L:
            taken = np.repeat(taken, 2)
        ok = _admissible_scale(k, src, K, L) & ~taken
        if k == 0:
            for l in np.flatnonzero(~taken & ~ok):
                G = grid.interval(0, int(l))
                out.append(G)
                forced.add(G)
        out.extend(grid.interval(k, int(l)) for l in np.flatnonzero(ok))
        taken |= ok
    out.sort(key=lambda I: float(I.left))
    fam = CZFamily(L, float(K), sources, out, frozenset(forced))
    if check:
        fam.checks = cz_properties(fam, h)
        bad = [k for k, v in fam.checks.items() if k.startswith("violations") and v]
        if bad:
            raise AssertionError(f"CZ property violations: {bad}")
    return fam


def cz_properties(fam: CZFamily, h: np.ndarray | None = None) -> dict:
    """Check (i)-(iv) exhaustively and measure the overlap and (v) constants."""
    N = 1 << fam.L
    K = fam.K
    G = _ivs(fam.intervals)
    J = _ivs(fam.sources)
    cover = np.zeros(N, int)
    for a, l in G.astype(np.int64):
        cover[a:a + l] += 1
    overlap = np.zeros(N, int)
    for a, lam in _dilate(G, 3.0, N):
        x = np.arange(math.ceil(a - 1e-9), math.ceil(a - 1e-9) + int(round(lam)))
        overlap[np.mod(x, N)] += 1
    free = np.array([I not in fam.forced for I in fam.intervals])
    Gf = G[free]
    # rows: sources, columns: unforced G
    in9 = _contains(_dilate(J, 9 * K, N), Gf, N)
    in3 = _contains(_dilate(J, 3 * K, N), Gf, N)
    off3 = _disjoint(_dilate(J, 3 * K, N), Gf, N)
    big = K * Gf[None, :, 1] > J[:, None, 1] + 1e-9
    out = {
        "violations_partition": int(np.sum(cover != 1)),
        "violations_iii": int(np.sum(~in9 & ~off3)),
        "violations_iv": int(np.sum(in3 & big)),
        "overlap_3G": int(overlap.max()),
        "forced": len(fam.forced),
    }
    if h is not None:
        Mh = maximal_function(h, 1.0)
        inf = lambda rows: np.array([Mh[int(a):int(a) + int(l)].min() for a, l in rows])
        sJ = float(inf(J).max())
        sG = float(inf(G).max())
        out["mutual_lower"] = sJ / sG if sG > 0 else 0.0
        out["mutual_upper"] = sG / (K * K * sJ) if sJ > 0 else 0.0
    return out


# ---------------------------------------------------------------------------
# minimal tiles and projections


def minimal_tiles(fam: CZFamily) -> list[Tile]:
    out = []
    for G in fam:
        k, l = G.scale, G.pos
        out.extend(tile_at(fam.L, k, m, l) for m in range(1 << k))
    return out


def _kernel(length: int, js: Sequence[int] | np.ndarray | None) -> np.ndarray:
    """``eta(z/l)/l * U_W(z)`` on lags ``z = -l+1 .. l-1``."""
    z = np.arange(-length + 1, length)
    h = eta(z / length) / length
    if js is None:
        return h.astype(complex)
    js = np.asarray(js, np.int64)
    ind = np.zeros(length)
    ind[js] = 1.0
    U = np.fft.ifft(ind) * length  # U(z) = sum_j e(jz/l), period l
    return h * U[np.mod(z, length)]


def _apply(f: np.ndarray, G: DyadicInterval, kern: np.ndarray, out: np.ndarray) -> None:
    """Add ``(f 1_G) * kern`` into ``out`` (periodic)."""
    N = f.size
    a, l = int(G.left), int(G.length)
    seg = f[a:a + l]
    if l <= 32:
        conv = np.convolve(seg, kern)
    else:
        n = 1 << int(math.ceil(math.log2(3 * l)))
        conv = np.fft.ifft(np.fft.fft(seg, n) * np.fft.fft(kern, n))[: 3 * l - 2]
    y = np.mod(np.arange(a - l + 1, a + 2 * l - 1), N)
    np.add.at(out, y, conv)


def _signal_array(f) -> tuple[np.ndarray, float]:
    if isinstance(f, Signal):
        return f.samples.astype(complex), f.spacing
    return np.asarray(f, complex), 1.0


def project(f: Signal, P: Tile) -> Signal:
    """``Pi_P f = [f 1_{I_P}] * eta_P`` by direct summation."""
    a, spacing = _signal_array(f)
    N = a.size
    L, k, m, l = tile_index(P)
    if 1 << L != N:
        raise ValueError("tile below the DFT resolution of the signal")
    length = 1 << k
    left = l * length
    z = np.arange(-length + 1, length)
    kern = np.exp(2j * np.pi * m * z / length) * eta(z / length) / length
    out = np.zeros(N, complex)
    for x in range(left, left + length):
        if a[x] != 0:
            np.add.at(out, np.mod(x + z, N), a[x] * kern)
    return Signal(out, spacing)


def project_set(f: Signal, tiles: Iterable[Tile] | Mapping[DyadicInterval, Sequence[int]]) -> Signal:
    """``Pi_W f`` for a set of minimal tiles, grouped by spatial interval."""
    a, spacing = _signal_array(f)
    N = a.size
    groups: dict = {}
    if isinstance(tiles, Mapping):
        groups = {G: list(js) for G, js in tiles.items()}
    else:
        for P in tiles:
            L, k, m, l = tile_index(P)
            if 1 << L != N:
                raise ValueError("tile below the DFT resolution of the signal")
            groups.setdefault(P.space, []).append(m)
    out = np.zeros(N, complex)
    for G in sorted(groups, key=lambda I: (-I.scale, I.pos)):
        js = groups[G]
        if len(js):
            _apply(a, G, _kernel(int(G.length), js), out)
    return Signal(out, spacing)


# ---------------------------------------------------------------------------
# principal and tail regions


@dataclass
class Regions:
    """Per CZ interval ``G``: boolean arrays over the ``l_G`` frequency slots.

    ``principal[G]`` marks ``Q``; ``freq_tail[i][G]`` and ``space_tail[i][G]``
    mark ``Q'(T_i)`` and ``Q''(T_i)``.
    """

    K: float
    tops: tuple
    principal: dict
    freq_tail: list
    space_tail: list

    def tiles(self, which: dict, L: int) -> list[Tile]:
        out = []
        for G, mask in which.items():
            out.extend(tile_at(L, G.scale, int(m), G.pos) for m in np.flatnonzero(mask))
        return out

    def counts(self) -> dict:
        return {G: int(v.sum()) for G, v in self.principal.items()}


def _freq_close(G: DyadicInterval, xi: Fraction, K: float) -> np.ndarray:
    l = int(G.length)
    lo = np.arange(l) / l  # inf omega_Q
    d = np.abs(lo - float(xi)) % 1.0
    d = np.minimum(d, 1.0 - d)
    return l * d <= K + 1e-12


def regions(fam: CZFamily, tops: Sequence[Top], K: float | None = None) -> Regions:
    K = fam.K if K is None else K
    N = 1 << fam.L
    G = _ivs(fam.intervals)
    principal = {I: np.zeros(int(I.length), bool) for I in fam}
    near = _contains(_dilate(_ivs([T.interval for T in tops]), 3 * K, N), G, N)
    close = []
    for i, T in enumerate(tops):
        cT = {}
        for j, I in enumerate(fam):
            c = _freq_close(I, T.xi, K)
            cT[I] = c
            if near[i, j]:
                principal[I] |= c
        close.append(cT)
    ft, st = [], []
    for cT in close:
        ft.append({I: ~principal[I] & ~cT[I] for I in fam})
        st.append({I: ~principal[I] & cT[I] for I in fam})
    return Regions(float(K), tuple(tops), principal, ft, st)


def tile_count_bound(fam: CZFamily, reg: Regions) -> tuple[bool, dict]:
    """``#Q[G] <= 3K inf_G sum_T 1_{3K I_T}`` for every ``G``; returns (ok, per-G slack)."""
    N = 1 << fam.L
    K = reg.K
    cnt = np.zeros(N)
    for left, lam in _dilate(_ivs([T.interval for T in reg.tops]), 3 * K, N):
        x = np.arange(N) + 0.5
        inside = ((x - left) % N) < lam if lam < N else np.ones(N, bool)
        cnt += inside
    ok = True
    slack = {}
    for G, (a, l) in zip(fam, _ivs(fam.intervals).astype(np.int64)):
        n = int(reg.principal[G].sum())
        bound = 3 * K * float(cnt[a:a + l].min())
        slack[G] = bound - n
        ok &= n <= bound + 1e-9
    return bool(ok), slack


# ---------------------------------------------------------------------------
# g + b split


def smoothness_M(t: float) -> int:
    tp = t / (t - 1)
    return 10 * math.ceil(2**8 * tp)


def choice_K(N_count: float, p: float, t: float) -> float:
    pp = p / (p - 1) if p > 1 else math.inf
    tp = t / (t - 1)
    M = smoothness_M(t)
    return max(1.0, N_count ** ((1 / pp) * (10 / M + 1 / (5 * tp))))


def gb_split(f: Signal, tops: Sequence[Top], tiles: Iterable[Tile] | Mapping, N_count: float, p: float, t: float,
             K: float | None = None, kappa: int = 1, spec: WaveletSpec = DEFAULT_SPEC,
             Mf: np.ndarray | None = None) -> tuple[Signal, Signal, dict]:
    """``f = g + b`` with ``g = Pi_Q f`` and ``b = Pi_{M \\ Q} f``.

    ``tiles`` is the collection ``P`` (tiles or a selection mask); CZ sources
    are its spatial intervals.  The report holds the normalized size of ``g``
    and of ``W[b]`` on each top.
    """
    if N_count < 1:
        raise ValueError("N must be at least 1")
    if not 1 < p <= 2 or t <= 1:
        raise ValueError("need 1 < p <= 2 and t > 1")
    from .selection import mask_to_tiles, tiles_to_mask

    L = f.L
    mask = tiles if isinstance(tiles, Mapping) else tiles_to_mask(L, tiles)
    tile_list = mask_to_tiles(L, mask)
    if K is None:
        K = choice_K(N_count, p, t)
    M = smoothness_M(t)
    N = f.N
    fp = local_tile_norm(f, tile_list, p, None if Mf is None else Mf)
    pp = p / (p - 1)
    if not tile_list or not tops:
        g = Signal(np.zeros(N, complex), f.spacing)
        return g, f, {"K": K, "M": M, "g_ratio": 0.0, "tail_ratios": [], "fp": fp, "recon_error": 0.0}
    fam = cz_intervals({P.space for P in tile_list}, K, L)
    reg = regions(fam, tops, K)
    g = project_set(f, {G: np.flatnonzero(v) for G, v in reg.principal.items()})
    b = project_set(f, {G: np.flatnonzero(~v) for G, v in reg.principal.items()})
    recon = float(np.linalg.norm(g.samples + b.samples - f.samples) / max(np.linalg.norm(f.samples), 1e-300))
    Wb = transform_W_all(b, spec)
    for k in range(L + 1):
        Wb.arrays[k] = np.where(mask[k], Wb.arrays[k], 0.0)
    sizes = dense_tree_sizes(Wb, Size("2*"), kappa)
    tails = []
    for T in tops:
        k = T.interval.scale
        res = max(k - kappa, 0)
        tails.append(float(sizes[k][math.floor(T.xi * 2**res) % (1 << res), T.interval.pos]))
    J = float(N)
    g_norm = float(np.linalg.norm(g.samples))
    denom_g = math.sqrt(J) * N_count ** (0.5 - 1 / (t * pp)) * fp
    denom_b = N_count ** (-1 / pp) * fp
    report = {
        "K": K,
        "M": M,
        "fp": fp,
        "g_ratio": g_norm / denom_g if denom_g > 0 else 0.0,
        "tail_sizes": tails,
        "tail_ratios": [s / denom_b if denom_b > 0 else 0.0 for s in tails],
        "recon_error": recon,
        "cz_count": len(fam),
        "forced": len(fam.forced),
        "tile_count_ok": tile_count_bound(fam, reg)[0],
        "cz_checks": fam.checks,
    }
    return g, b, report
