"""Periodic discrete signals, multipliers, the Carleson maximal operator and norms.

Samples live on the torus ``Z / N`` with ``N = 2^L``; sample ``x`` carries mass
``spacing`` (1 by default), so Lebesgue quantities are counting measures.
DFT bins are indexed by signed integers ``n`` in ``[-N/2, N/2)``.
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Signal",
    "Multiplier",
    "Weight",
    "HALF_LINE",
    "smooth_half_line",
    "shifted_half_line",
    "signed_bins",
    "sparse_products",
    "chi_weight",
    "modulated_multiplier",
    "carleson_max",
    "carleson_max_bruteforce",
    "modulation_range",
    "weak_lorentz_norm",
    "lp_norm",
    "local_averages",
    "interval_sample_range",
    "scale_averages",
    "maximal_function",
    "ap_constants",
    "k_constant",
    "weighted_weak_ratio",
    "resolve_threads",
]

_MAGIC = b"TBSG"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``TILEBENCH_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("TILEBENCH_THREADS", "1") or 1)
    return max(1, int(threads))


@dataclass(frozen=True, eq=False)
class Signal:
    samples: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size == 0 or s.size & (s.size - 1):
            raise ValueError("signal length must be a power of two")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def N(self) -> int:
        return self.samples.size

    @property
    def L(self) -> int:
        return self.N.bit_length() - 1

    @cached_property
    def spectrum(self) -> np.ndarray:
        out = np.fft.fft(self.samples)
        out.setflags(write=False)
        return out

    @classmethod
    def from_spectrum(cls, spec: np.ndarray, spacing: float = 1.0) -> "Signal":
        return cls(np.fft.ifft(spec), spacing)

    @classmethod
    def zeros(cls, L: int) -> "Signal":
        return cls(np.zeros(1 << L))

    @classmethod
    def indicator(cls, L: int, support: Sequence[int] | np.ndarray) -> "Signal":
        s = np.zeros(1 << L)
        s[np.asarray(support, dtype=int)] = 1.0
        return cls(s)

    @classmethod
    def exponential(cls, L: int, n: int) -> "Signal":
        x = np.arange(1 << L)
        return cls(np.exp(2j * np.pi * n * x / (1 << L)))

    def __add__(self, other: "Signal") -> "Signal":
        return Signal(self.samples + other.samples, self.spacing)

    def __sub__(self, other: "Signal") -> "Signal":
        return Signal(self.samples - other.samples, self.spacing)

    def scaled(self, c: complex) -> "Signal":
        return Signal(self.samples * c, self.spacing)

    def modulated(self, n: int) -> "Signal":
        x = np.arange(self.N)
        return Signal(self.samples * np.exp(2j * np.pi * n * x / self.N), self.spacing)

    def norm(self, p: float = 2.0) -> float:
        return lp_norm(np.abs(self.samples), p, self.spacing)

    def parseval_error(self) -> float:
        a = np.sum(np.abs(self.samples) ** 2)
        b = np.sum(np.abs(self.spectrum) ** 2) / self.N
        return abs(a - b) / max(a, 1e-300)

    # -- serialization ---------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# tilebench-v1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "re", "im"])
        for i, z in enumerate(self.samples):
            w.writerow([i, repr(float(z.real)), repr(float(z.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Signal":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        if rows[0] != ["index", "re", "im"]:
            raise ValueError("signal CSV must have header index,re,im")
        body = rows[1:]
        out = np.zeros(len(body), dtype=complex)
        for r in body:
            out[int(r[0])] = float(r[1]) + 1j * float(r[2])
        return cls(out)

    def to_bytes(self) -> bytes:
        head = _MAGIC + struct.pack("<Qd", self.N, self.spacing)
        return head + self.samples.astype("<c16").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Signal":
        if data[:4] != _MAGIC:
            raise ValueError("not a TBSG signal")
        n, spacing = struct.unpack("<Qd", data[4:20])
        body = np.frombuffer(data[20:], dtype="<c16")
        if body.size != n:
            raise ValueError("truncated TBSG payload")
        return cls(body.astype(np.complex128), spacing)


@dataclass(frozen=True)
class Multiplier:
    """Frequency multiplier evaluated on bin offsets ``xi = n - N0``."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    order: int = 4
    tag: str = "custom"

    def __call__(self, xi) -> np.ndarray:
        return np.asarray(self.evaluate(np.asarray(xi, dtype=float)), dtype=complex)

    def hm_check(self, tol: float = 1e-6, lo: float = 1e-3, hi: float = 1e3, n: int = 400) -> tuple[bool, list[float]]:
        """Finite-difference check of ``|xi|^a |m^(a)(xi)| <= 1 + tol`` on a log grid.

        Returns the verdict and the worst value per derivative order.
        """
        worst = []
        for side in (1.0, -1.0):
            xs = side * np.geomspace(lo, hi, n)
            for a in range(self.order + 1):
                h = np.abs(xs) * 1e-3
                # central difference of order a with step h
                coef = [(-1) ** j * math.comb(a, j) for j in range(a + 1)]
                acc = np.zeros_like(xs, dtype=complex)
                for j, c in enumerate(coef):
                    acc += c * self(xs + (a / 2 - j) * h)
                deriv = acc / h**a
                val = float(np.max(np.abs(xs) ** a * np.abs(deriv)))
                if len(worst) <= a:
                    worst.append(val)
                else:
                    worst[a] = max(worst[a], val)
        return all(v <= 1 + tol for v in worst), worst


def _half_line(xi: np.ndarray) -> np.ndarray:
    return (xi > 0).astype(float)


HALF_LINE = Multiplier(_half_line, order=4, tag="half_line")


def smooth_half_line(width: float = 4.0) -> Multiplier:
    """A smoothed step ``1/2 (1 + tanh(xi / width))``."""
    return Multiplier(lambda xi: 0.5 * (1 + np.tanh(xi / width)), order=2, tag=f"smooth_half_line:{width}")


def shifted_half_line(shift: int) -> Multiplier:
    """``1_{(-shift - 1, inf)}``, e.g. ``shift = 1`` keeps the bin at ``N0 - 1``."""
    return Multiplier(lambda xi: (xi > -shift - 1 + 0.5).astype(float), order=4, tag=f"half_line:{shift}")


def signed_bins(N: int) -> np.ndarray:
    n = np.fft.fftfreq(N, d=1.0 / N)
    return n.astype(np.int64)


def modulated_multiplier(f: Signal, m: Multiplier, N0: int) -> Signal:
    """``H_N0 f``: the spectrum of ``f`` multiplied by ``m(n - N0)``."""
    if int(N0) != N0:
        raise ValueError("N0 must lie on the frequency lattice")
    n = signed_bins(f.N)
    return Signal.from_spectrum(f.spectrum * m(n - N0), f.spacing)


def modulation_range(N: int) -> np.ndarray:
    """Canonical lattice of modulation parameters, ``-N/2 - 1 .. N/2 - 1``."""
    return np.arange(-N // 2 - 1, N // 2, dtype=np.int64)


def carleson_max(f: Signal, m: Multiplier = HALF_LINE, modulations: np.ndarray | None = None,
                 block: int = 256, threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise ``sup_N |H_N f|`` over the modulation lattice and a maximizer.

    One inverse FFT per modulation, evaluated in blocks; blocks may run on a
    thread pool but are reduced in increasing ``N`` order, so ties go to the
    smallest ``N`` regardless of the thread count.
    """
    N = f.N
    mods = modulation_range(N) if modulations is None else np.asarray(modulations, dtype=np.int64)
    n = signed_bins(N)
    spec = f.spectrum
    chunks = [mods[i:i + block] for i in range(0, mods.size, block)]

    def run(chunk: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        masks = m(n[None, :] - chunk[:, None])
        vals = np.abs(np.fft.ifft(masks * spec[None, :], axis=1))
        idx = np.argmax(vals, axis=0)
        return vals[idx, np.arange(N)], chunk[idx]

    nthreads = resolve_threads(threads)
    if nthreads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(nthreads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    best = np.full(N, -np.inf)
    arg = np.zeros(N, dtype=np.int64)
    for vals, which in parts:
        upd = vals > best
        best[upd] = vals[upd]
        arg[upd] = which[upd]
    return best, arg


def carleson_max_bruteforce(f: Signal, m: Multiplier = HALF_LINE) -> tuple[np.ndarray, np.ndarray]:
    """Direct-summation oracle for :func:`carleson_max` (``N <= 2^10``)."""
    N = f.N
    if N > 1 << 10:
        raise ValueError("brute-force oracle limited to N <= 1024")
    n = signed_bins(N)
    x = np.arange(N)
    E = np.exp(2j * np.pi * np.outer(n, x) / N) / N
    best = np.full(N, -1.0)
    arg = np.zeros(N, dtype=np.int64)
    for N0 in modulation_range(N):
        vals = np.abs((f.spectrum * m(n - N0)) @ E)
        upd = vals > best + 1e-12 * np.maximum(1.0, np.abs(best))
        best[upd] = vals[upd]
        arg[upd] = N0
    return best, arg


# ---------------------------------------------------------------------------
# norms


def _mass(n: int, weight: "Weight | np.ndarray | None", spacing: float) -> np.ndarray:
    if weight is None:
        return np.full(n, float(spacing))
    w = weight.values if isinstance(weight, Weight) else np.asarray(weight, dtype=float)
    if w.shape != (n,):
        raise ValueError("weight length mismatch")
    return w


def lp_norm(g: np.ndarray, p: float, spacing: float = 1.0, weight=None) -> float:
    g = np.abs(np.asarray(g))
    mass = _mass(g.size, weight, spacing)
    if math.isinf(p):
        return float(np.max(g[mass > 0])) if g.size else 0.0
    top = float(g.max()) if g.size else 0.0
    if top == 0.0 or not math.isfinite(top):
        return top
    # factor out the max so tiny or huge samples do not under/overflow in g**p
    return top * float(np.sum((g / top) ** p * mass) ** (1.0 / p))


def weak_lorentz_norm(g: np.ndarray, p: float, weight=None, spacing: float = 1.0) -> float:
    """``sup_t t * mu{|g| > t}^(1/p)``, exact via sorting."""
    g = np.abs(np.asarray(g, dtype=float).ravel())
    if g.size == 0:
        raise ValueError("empty signal")
    if p <= 0:
        raise ValueError("p must be positive")
    mass = _mass(g.size, weight, spacing)
    order = np.argsort(-g, kind="stable")
    v = g[order]
    cm = np.cumsum(mass[order])
    # last index of each tie group
    last = np.r_[v[1:] != v[:-1], True]
    vals = v[last] * cm[last] ** (1.0 / p)
    return float(np.max(vals))


# ---------------------------------------------------------------------------
# dyadic averages on the sample torus


def interval_sample_range(left, length: int, N: int) -> np.ndarray:
    """Sample indices of ``[left, left + length)`` on ``Z / N``."""
    start = math.ceil(left)
    return (start + np.arange(int(length))) % N


def _grid_starts(N: int, k: int, shift: int) -> np.ndarray:
    """First sample of every scale-``k`` interval of grid ``D_shift`` on ``Z/N``."""
    cnt = N >> k
    l = np.arange(cnt)
    off = shift * (-1 if k % 2 else 1)
    # 2^k (l + off/3), rounded up to the next sample
    num = (1 << k) * (3 * l + off)
    return (-((-num) // 3)) % N


def scale_averages(values: np.ndarray, k: int, shift: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Means of ``values`` over the scale-``k`` intervals of ``D_shift``.

    Returns ``(starts, means)``; interval ``i`` covers samples
    ``starts[i] + 0 .. 2^k - 1`` modulo ``N``.
    """
    N = values.size
    starts = _grid_starts(N, k, shift)
    ext = np.concatenate([values, values])
    cs = np.concatenate([[0.0], np.cumsum(ext)])
    w = 1 << k
    return starts, (cs[starts + w] - cs[starts]) / w


def _spread(starts: np.ndarray, vals: np.ndarray, k: int, N: int) -> np.ndarray:
    """Per-sample value of the interval containing it."""
    w = 1 << k
    idx = (starts[:, None] + np.arange(w)[None, :]) % N
    out = np.empty(N)
    out[idx.ravel()] = np.repeat(vals, w)
    return out


def maximal_function(f, p: float = 1.0, grids: Sequence[int] = (0, 1, 2)) -> np.ndarray:
    """Dyadic ``M_p f`` over all intervals of the given shifted grids, by scale recursion."""
    a = np.abs(f.samples if isinstance(f, Signal) else np.asarray(f))
    N = a.size
    L = N.bit_length() - 1
    ap = a.astype(float) ** p
    out = np.zeros(N)
    for g in grids:
        for k in range(L + 1):
            starts, means = scale_averages(ap, k, g)
            out = np.maximum(out, _spread(starts, means, k, N))
    return out ** (1.0 / p)


def sparse_products(fs: Sequence, ps: Sequence[float], grids: Sequence[int] = (0, 1, 2)) -> np.ndarray:
    """Pointwise ``sup_Q 1_Q prod_j <f_j>_{p_j,Q}`` (used by the sparse maximal function)."""
    arrs = [np.abs(f.samples if isinstance(f, Signal) else np.asarray(f)).astype(float) for f in fs]
    N = arrs[0].size
    L = N.bit_length() - 1
    out = np.zeros(N)
    for g in grids:
        for k in range(L + 1):
            prod = None
            starts = None
            for a, p in zip(arrs, ps):
                starts, means = scale_averages(a**p, k, g)
                term = means ** (1.0 / p)
                prod = term if prod is None else prod * term
            out = np.maximum(out, _spread(starts, prod, k, N))
    return out


def chi_weight(N: int, left, length, M: float) -> np.ndarray:
    """``chi_I^M`` at sample cells (cell ``x`` has center ``x + 1/2``), periodic distance."""
    c = float(left) + float(length) / 2
    x = np.arange(N) + 0.5
    d = np.abs(x - c) % N
    d = np.minimum(d, N - d)
    return (1.0 + (d / float(length)) ** 2) ** (-M / 2)


def local_averages(f, I, p: float = 1.0, tail_exponent: float = 2.0**9) -> tuple[float, float]:
    """``(<f>_{p,I}, <<f>>_{p,I})``; the tail factor is ``chi_I^(2^9/p)``.

    ``I`` is a :class:`~tilebench.dyadic.DyadicInterval` of a spatial grid or a
    pair ``(left, length)``.
    """
    a = np.abs(f.samples if isinstance(f, Signal) else np.asarray(f)).astype(float)
    N = a.size
    if hasattr(I, "left"):
        left, length = I.left, I.length
    else:
        left, length = I
    idx = interval_sample_range(left, length, N)
    plain = (np.sum(a[idx] ** p) / float(length)) ** (1.0 / p)
    chi = chi_weight(N, left, length, tail_exponent / p)
    tailed = (np.sum((a * chi) ** p) / float(length)) ** (1.0 / p)
    return float(plain), float(tailed)


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True, eq=False)
class Weight:
    """Strictly positive weight normalized to total mass one."""

    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weight must be a nonempty vector")
        if not np.all(w > 0):
            raise ValueError("weight must be strictly positive")
        w = w / w.sum()
        w.setflags(write=False)
        object.__setattr__(self, "values", w)

    @classmethod
    def ones(cls, L: int) -> "Weight":
        return cls(np.ones(1 << L))

    def constants(self, q: float = 2.0) -> tuple[float, float, float]:
        key = ("ap", q)
        if key not in self._cache:
            self._cache[key] = ap_constants(self, q)
        return self._cache[key]

    def to_csv(self) -> str:
        rows = ["# tilebench-v1", "index,w"] + [f"{i},{v!r}" for i, v in enumerate(self.values.tolist())]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "Weight":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        if rows[0] != ["index", "w"]:
            raise ValueError("weight CSV must have header index,w")
        body = rows[1:]
        w = np.zeros(len(body))
        for r in body:
            w[int(r[0])] = float(r[1])
        return cls(w)


def ap_constants(w: Weight, q: float = 2.0) -> tuple[float, float, float]:
    """``([w]_A1, [w]_Ainf, [w]_Aq)`` over the intervals of ``D_0``.

    ``[w]_Ainf`` is the Fujii-Wilson constant ``sup_I <M(w 1_I)>_I / <w>_I``.
    """
    v = w.values
    N = v.size
    L = N.bit_length() - 1
    a1 = 0.0
    aq = 0.0
    ainf = 0.0
    # running pointwise max of averages over scales <= K equals M(w 1_I) on I
    running = np.zeros(N)
    sigma = v ** (-1.0 / (q - 1.0)) if q > 1 else None
    for k in range(L + 1):
        starts, means = scale_averages(v, k, 0)
        idx = (starts[:, None] + np.arange(1 << k)[None, :]) % N
        mins = v[idx].min(axis=1)
        a1 = max(a1, float(np.max(means / mins)))
        if sigma is not None:
            _, smeans = scale_averages(sigma, k, 0)
            aq = max(aq, float(np.max(means * smeans ** (q - 1.0))))
        running = np.maximum(running, _spread(starts, means, k, N))
        _, mmeans = scale_averages(running, k, 0)
        ainf = max(ainf, float(np.max(mmeans / means)))
    return a1, ainf, aq


def k_constant(w: Weight, p: float) -> float:
    """``K(w,p) = [w]_A1^(1/p) [w]_Ainf^(1-1/p) (log_1 [w]_Ainf)^(2/p)`` with ``log_1 = max(1, log)``."""
    a1, ainf, _ = w.constants()
    log1 = max(1.0, math.log(ainf))
    return a1 ** (1 / p) * ainf ** (1 - 1 / p) * log1 ** (2 / p)


def weighted_weak_ratio(f: Signal, w: Weight, p: float, m: Multiplier = HALF_LINE, threads: int | None = None) -> float:
    """``||Cf||_{L^{p,inf}(w)} (p-1) / (K(w,p) ||f||_{L^p(w)})``."""
    if not 1 < p <= 2:
        raise ValueError("need 1 < p <= 2")
    fn = lp_norm(f.samples, p, weight=w)
    if fn == 0:
        raise ValueError("zero signal")
    cf, _ = carleson_max(f, m, threads=threads)
    return weak_lorentz_norm(cf, p, weight=w) * (p - 1) / (k_constant(w, p) * fn)
