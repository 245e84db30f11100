"""Wave packets on the standard tiling, the transforms W and A, and the Carleson model form.

Tiles come from :func:`tilebench.dyadic.standard_grids`: a tile of spatial
scale ``k`` on a length ``N = 2^L`` torus covers samples ``[2^k l, 2^k (l+1))``
and DFT bins ``[m B, (m+1) B)`` with ``B = 2^(L-k)``.  Dense per-scale arrays
are indexed ``[m, l]`` and have shape ``(2^k, B)``.

The sup over the adapted class is replaced by a fixed dictionary of ``D``
packets per tile.  Member ``d`` has spectrum ``s_d((j + 1/2) / B)`` on bin
``m B + j``, a smooth bump supported in ``[1/8, 7/8]``, and is centred at
``c(I_P) + shift_d |I_P|``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Mapping

import numpy as np
from scipy import sparse

from .dyadic import Tile, standard_grids, tile_at
from .signal import Signal, maximal_function

__all__ = [
    "WaveletSpec",
    "DEFAULT_SPEC",
    "TileField",
    "TileFunction",
    "tile_index",
    "wavelet",
    "modified_wavelet",
    "transform_W",
    "transform_A",
    "transform_W_all",
    "transform_A_all",
    "model_form",
    "local_tile_norm",
    "iter_standard_tiles",
    "scale_inf",
]

# (spectral centre, half-width, spatial shift in units of |I_P|, amplitude frequency)
_DICTIONARY = (
    (0.5, 0.375, 0.0, 0.0),
    (0.5, 0.25, 0.0, 0.5),
    (0.375, 0.25, 0.0, -0.5),
    (0.625, 0.25, 0.0, 1.0),
    (0.5, 0.375, 0.25, -1.0),
    (0.5, 0.375, -0.25, 0.25),
    (0.4, 0.2, 0.125, -0.25),
    (0.6, 0.2, -0.125, 0.0),
)


def _bump(u: np.ndarray, c: float, h: float) -> np.ndarray:
    t = (u - c) / h
    out = np.zeros_like(u, dtype=float)
    inside = np.abs(t) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass(frozen=True)
class WaveletSpec:
    """Dictionary parameters; ``order`` is the nominal decay order of the class."""

    order: int = 2**9 * 10
    D: int = 8

    def __post_init__(self) -> None:
        if not 1 <= self.D <= len(_DICTIONARY):
            raise ValueError(f"dictionary size must be in 1..{len(_DICTIONARY)}")
        if self.order % 2:
            raise ValueError("order must be even")

    def members(self) -> tuple:
        return _DICTIONARY[: self.D]

    def spectrum(self, B: int, d: int) -> np.ndarray:
        c, h, _, _ = _DICTIONARY[d]
        if B < 8:
            # too few bins to resolve narrow bumps; keep the widest profile
            c, h = 0.5, 0.375
        return _bump((np.arange(B) + 0.5) / B, c, h)

    def offset(self, k: int, d: int) -> float:
        """Packet centre relative to the left endpoint of ``I_P``."""
        return (0.5 + _DICTIONARY[d][2]) * 2.0**k

    def amplitude(self, u: np.ndarray, d: int) -> np.ndarray:
        """Smooth unimodular nu-weight ``A_d(u)``, ``u = (nu - c(omega^b)) |I_P|``."""
        return np.exp(2j * np.pi * _DICTIONARY[d][3] * u)

    def norm_constant(self, L: int, k: int, d: int) -> float:
        return _norm_constant(self, L, k, d)


@lru_cache(maxsize=512)
def _norm_constant(spec: WaveletSpec, L: int, k: int, d: int) -> float:
    N, B = 1 << L, 1 << (L - k)
    full = np.zeros(N, dtype=complex)
    j = np.arange(B)
    full[:B] = spec.spectrum(B, d) * np.exp(-2j * np.pi * j * spec.offset(k, d) / N)
    phi = np.fft.ifft(full)
    return 1.0 / float(np.sum(np.abs(phi)))


DEFAULT_SPEC = WaveletSpec()


def tile_index(P: Tile) -> tuple[int, int, int, int]:
    """``(L, k, m, l)`` of a tile of the standard grids."""
    sg, fg = P.space.grid, P.freq.grid
    if sg.shift or fg.shift or fg.k_min != -sg.k_max or fg.k_max != 0 or sg.k_min != 0:
        raise ValueError(f"tile {P} is not on the standard grid pair")
    return sg.k_max, P.space.scale, P.freq.pos, P.space.pos


def _check_resolution(P: Tile, N: int) -> tuple[int, int, int]:
    L, k, m, l = tile_index(P)
    if 1 << L != N:
        raise ValueError(f"tile {P} lives on a length-{1 << L} torus, signal has {N} samples")
    return k, m, l


def wavelet(P: Tile, d: int = 0, spec: WaveletSpec = DEFAULT_SPEC) -> Signal:
    """Member ``d`` of the dictionary for ``P``, L1-normalized."""
    L, k, m, l = tile_index(P)
    N, B = 1 << L, 1 << (L - k)
    spec_ = np.zeros(N, dtype=complex)
    n = m * B + np.arange(B)
    xc = (l << k) + spec.offset(k, d)
    spec_[n] = spec.spectrum(B, d) * np.exp(-2j * np.pi * n * xc / N)
    return Signal(np.fft.ifft(spec_) * spec.norm_constant(L, k, d))


def _sibling_band(m: int) -> int:
    return m ^ 1


def modified_wavelet(P: Tile, d: int, nu: np.ndarray, spec: WaveletSpec = DEFAULT_SPEC) -> np.ndarray:
    """Samples of ``psi(x, nu(x)) 1_{omega^b}(nu(x))`` for the dictionary member ``d``."""
    L, k, m, l = tile_index(P)
    N, B = 1 << L, 1 << (L - k)
    phi = wavelet(P, d, spec).samples
    if k == 0:
        return np.zeros(N, dtype=complex)
    nb = np.mod(nu, N)
    sib = _sibling_band(m)
    inside = nb // B == sib
    u = (nb - (sib * B + B / 2)) / B
    return phi * spec.amplitude(u, d) * inside


def transform_W(f: Signal, P: Tile, spec: WaveletSpec = DEFAULT_SPEC) -> float:
    """Dictionary maximum of ``|<f, phi>|``, by direct summation."""
    _check_resolution(P, f.N)
    return max(abs(np.vdot(wavelet(P, d, spec).samples, f.samples)) for d in range(spec.D))


def _check_lattice(Nx: np.ndarray, N: int) -> np.ndarray:
    Nx = np.asarray(Nx)
    if Nx.shape != (N,):
        raise ValueError("N must give one lattice frequency per sample")
    if not np.all(np.equal(np.mod(Nx, 1), 0)):
        raise ValueError("N must take values on the frequency lattice")
    return Nx.astype(np.int64)


def transform_A(f: Signal, P: Tile, Nx: np.ndarray, spec: WaveletSpec = DEFAULT_SPEC) -> float:
    """Dictionary maximum of the modified pairing, by direct summation."""
    _check_resolution(P, f.N)
    Nx = _check_lattice(Nx, f.N)
    return max(abs(np.vdot(modified_wavelet(P, d, Nx, spec), f.samples)) for d in range(spec.D))


# ---------------------------------------------------------------------------
# dense evaluation over the whole tiling


class TileField:
    """Nonnegative values on every tile of the standard length-``2^L`` tiling."""

    def __init__(self, L: int, arrays: Mapping[int, np.ndarray]):
        self.L = L
        self.arrays = {}
        for k in range(L + 1):
            a = np.asarray(arrays[k], dtype=float)
            if a.shape != (1 << k, 1 << (L - k)):
                raise ValueError(f"scale {k} array has shape {a.shape}")
            self.arrays[k] = a

    @classmethod
    def zeros(cls, L: int) -> "TileField":
        return cls(L, {k: np.zeros((1 << k, 1 << (L - k))) for k in range(L + 1)})

    def __getitem__(self, P: Tile) -> float:
        L, k, m, l = tile_index(P)
        return float(self.arrays[k][m, l])

    def value(self, k: int, m: int, l: int) -> float:
        return float(self.arrays[k][m, l])

    def __mul__(self, other: "TileField") -> "TileField":
        return TileField(self.L, {k: self.arrays[k] * other.arrays[k] for k in self.arrays})

    def max(self) -> float:
        return max(float(a.max()) for a in self.arrays.values())

    def restrict(self, tiles: Iterable[Tile]) -> "TileFunction":
        return TileFunction({P: self[P] for P in tiles})


class TileFunction(dict):
    """Finitely supported nonnegative function on tiles."""

    def __setitem__(self, P: Tile, v: float) -> None:
        if v < 0:
            raise ValueError("tile functions are nonnegative")
        super().__setitem__(P, float(v))

    def __init__(self, data: Mapping[Tile, float] | None = None):
        super().__init__()
        for P, v in (data or {}).items():
            self[P] = v

    def ordered(self) -> Iterator[tuple[Tile, float]]:
        for P in sorted(self, key=_canonical):
            yield P, self[P]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# tilebench-v1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tile", "value"])
        for P, v in self.ordered():
            w.writerow([str(P), repr(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, L: int) -> "TileFunction":
        from .dyadic import parse_tile

        sg, fg = standard_grids(L)
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        if rows[0] != ["tile", "value"]:
            raise ValueError("tile CSV must have header tile,value")
        return cls({parse_tile(r[0], sg, fg): float(r[1]) for r in rows[1:]})


def _canonical(P: Tile) -> tuple:
    return (-P.space.scale, P.space.pos, P.freq.pos)


def _band_coefficients(spec: WaveletSpec, L: int, k: int, d: int, G: np.ndarray) -> np.ndarray:
    """``|<h, phi_{(k,m,l),d}>|`` for all ``m, l`` from band spectra ``G[m, j] = h_m^(m B + j)``."""
    N, B = 1 << L, 1 << (L - k)
    j = np.arange(B)
    tw = spec.spectrum(B, d) * np.exp(2j * np.pi * j * spec.offset(k, d) / N)
    vals = np.fft.ifft(G * tw[None, :], axis=1) * (B / N)
    return np.abs(vals) * spec.norm_constant(L, k, d)


def transform_W_all(f: Signal, spec: WaveletSpec = DEFAULT_SPEC) -> TileField:
    """``W[f]`` on every tile: per scale, band-wise B-point inverse FFTs of ``f^``."""
    L, N = f.L, f.N
    F = np.asarray(f.spectrum)
    out = {}
    for k in range(L + 1):
        B = 1 << (L - k)
        G = F.reshape(1 << k, B)
        out[k] = np.max([_band_coefficients(spec, L, k, d, G) for d in range(spec.D)], axis=0)
    return TileField(L, out)


def transform_A_all(f: Signal, Nx: np.ndarray, spec: WaveletSpec = DEFAULT_SPEC, chunk: int = 1 << 22) -> TileField:
    """``A[f]`` on every tile.

    Sample ``x`` feeds only the band whose sibling contains ``N(x)``, so per
    scale the band spectra are a one-hot sparse matrix times a partial DFT
    matrix; tiles of spatial scale 1 (whole frequency torus) get 0.
    """
    L, N = f.L, f.N
    Nx = _check_lattice(Nx, N)
    nb = np.mod(Nx, N)
    x = np.arange(N)
    out = {0: np.zeros((1, N))}
    for k in range(1, L + 1):
        B = 1 << (L - k)
        bands = 1 << k
        owner = _sibling_band(nb // B)  # band m receiving sample x
        sib = nb // B
        u = (nb - (sib * B + B / 2)) / B
        base = f.samples * np.exp(-2j * np.pi * owner * B * x / N)
        G = np.zeros((spec.D, bands, B), dtype=complex)
        step = max(1, chunk // B)
        for a in range(0, N, step):
            xs = x[a:a + step]
            E = np.exp(-2j * np.pi * np.outer(xs, np.arange(B)) / N)
            for d in range(spec.D):
                h = base[a:a + step] * np.conj(spec.amplitude(u[a:a + step], d))
                S = sparse.csr_matrix((h, (owner[a:a + step], np.arange(xs.size))), shape=(bands, xs.size))
                G[d] += S @ E
        out[k] = np.max([_band_coefficients(spec, L, k, d, G[d]) for d in range(spec.D)], axis=0)
    return TileField(L, out)


def model_form(tiles: Iterable[Tile], f1: Signal, f2: Signal, Nx: np.ndarray,
               spec: WaveletSpec = DEFAULT_SPEC, W: TileField | None = None, A: TileField | None = None) -> float:
    """``sum_P |I_P| W[f1](P) A[f2](P)`` in canonical tile order."""
    tiles = sorted(tiles, key=_canonical)
    if not tiles:
        return 0.0
    W = transform_W_all(f1, spec) if W is None else W
    A = transform_A_all(f2, Nx, spec) if A is None else A
    total = 0.0
    for P in tiles:
        total += float(P.space.length) * W[P] * A[P]
    return total


def local_tile_norm(f, tiles: Iterable[Tile], p: float = 1.0, Mf: np.ndarray | None = None) -> float:
    """``[f]_{p,P} = sup_P inf_{I_P} M_p f``; 0 for an empty collection."""
    tiles = list(tiles)
    if not tiles:
        return 0.0
    if Mf is None:
        Mf = maximal_function(f, p)
    best = 0.0
    for P in tiles:
        lo = int(P.space.left)
        best = max(best, float(Mf[lo:lo + int(P.space.length)].min()))
    return best


def iter_standard_tiles(L: int) -> Iterator[Tile]:
    for k in range(L, -1, -1):
        for l in range(1 << (L - k)):
            for m in range(1 << k):
                yield tile_at(L, k, m, l)


def scale_inf(Mf: np.ndarray, k: int) -> np.ndarray:
    """``inf`` of ``Mf`` over each scale-``k`` interval of ``D_0``."""
    return Mf.reshape(-1, 1 << k).min(axis=1)
