"""Command-line driver.

Every subcommand writes a CSV whose first line is ``# tilebench-v1``.  Exit
codes: 0 success, 2 bad arguments or config, 3 numerical failure, 4 violated
invariant.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import dyadic, multifreq, rank1, selection, signal, sparsedom, treespace, wavepackets
from .dyadic import DyadicGrid, tile_at
from .signal import HALF_LINE, Signal

HEADER = "# tilebench-v1"
FAMILIES = ("indicator", "random-phase", "packet-sum")
EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4


class SchemaError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class InvariantError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# signals and output


def make_signal(L: int, family: str, seed: int, density: float = 2.0**-5) -> Signal:
    """Seeded test signal of length ``2^L``."""
    if family not in FAMILIES:
        raise SchemaError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    rng = np.random.default_rng(seed)
    N = 1 << L
    if family == "indicator":
        if not 0 < density <= 1:
            raise SchemaError("density must lie in (0, 1]")
        # exact cardinality round(density N), at least one point
        F = np.zeros(N, complex)
        F[rng.permutation(N)[: max(1, round(density * N))]] = 1.0
        return Signal(F)
    if family == "random-phase":
        return Signal(np.exp(2j * np.pi * rng.random(N)))
    out = np.zeros(N, complex)
    for _ in range(8):
        k = int(rng.integers(0, L + 1))
        P = tile_at(L, k, int(rng.integers(0, 1 << k)), int(rng.integers(0, 1 << (L - k))))
        out += np.exp(2j * np.pi * rng.random()) * wavepackets.wavelet(P).samples
    return Signal(out)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(rows: Sequence[dict], columns: Sequence[str], out: str | None) -> str:
    for r in rows:
        for c in columns:
            v = r[c]
            if isinstance(v, (float, np.floating)) and not math.isfinite(v) and not math.isnan(v):
                raise NumericalError(f"non-finite value in column {c}")
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    text = buf.getvalue()
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def read_csv(path: str) -> tuple[list[str], list[dict]]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != HEADER:
            raise SchemaError(f"{path}: missing '{HEADER}' header")
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: no column header")
    cols = rows[0]
    out = []
    for r in rows[1:]:
        if len(r) != len(cols):
            raise SchemaError(f"{path}: ragged row {r}")
        out.append(dict(zip(cols, r)))
    return cols, out


def svg_plot(series: dict[str, tuple[Sequence[float], Sequence[float]]], path: str, loglog: bool = False,
             xlabel: str = "x", ylabel: str = "y") -> None:
    """Self-contained SVG line plot, no external assets."""
    W, H, pad = 480, 320, 50
    tr = (lambda v: math.log10(v)) if loglog else (lambda v: v)
    pts = {}
    for name, (xs, ys) in series.items():
        pts[name] = [(tr(x), tr(y)) for x, y in zip(xs, ys) if (not loglog or (x > 0 and y > 0))]
    allp = [p for v in pts.values() for p in v]
    if not allp:
        raise NumericalError("nothing to plot")
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    x1, y1 = (x1 if x1 > x0 else x0 + 1), (y1 if y1 > y0 else y0 + 1)
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (W - 2 * pad)
    sy = lambda y: H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>']
    lab = (lambda v: f"1e{v:.2g}") if loglog else (lambda v: f"{v:.3g}")
    for v, anchor in ((x0, "start"), (x1, "end")):
        parts.append(f'<text x="{sx(v):.1f}" y="{H - pad + 15}" text-anchor="{anchor}">{lab(v)}</text>')
    for v in (y0, y1):
        parts.append(f'<text x="{pad - 4}" y="{sy(v):.1f}" text-anchor="end">{lab(v)}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="14" y="{H / 2}" text-anchor="middle" transform="rotate(-90 14 {H / 2})">{ylabel}</text>')
    for i, (name, p) in enumerate(sorted(pts.items())):
        c = colors[i % len(colors)]
        poly = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in p)
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{poly}"/>')
        parts.append(f'<text x="{W - pad}" y="{pad + 14 * i}" text-anchor="end" fill="{c}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    ok = (xs > 0) & (ys > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)[0])


def _floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(Fraction(s.strip())) for s in text.split(",") if s.strip()]
    except (ValueError, ZeroDivisionError):
        raise SchemaError(f"--{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise SchemaError(f"--{name}: empty grid")
    return vals


# ---------------------------------------------------------------------------
# subcommands


def cmd_grid(a) -> list[dict]:
    rows = []
    for g in (int(s) for s in _floats(a.shifts, "shifts")):
        if g not in (0, 1, 2):
            raise SchemaError("shifts must be 0, 1 or 2")
        grid = DyadicGrid(g, 0, a.L)
        pairs, bad = dyadic.grid_violations(grid)
        rows.append({"shift": g, "intervals": sum(grid.count(k) for k in range(a.L + 1)), "pairs": pairs,
                     "violations": bad})
    write_csv(rows, ["shift", "intervals", "pairs", "violations"], a.out)
    if any(r["violations"] for r in rows):
        raise InvariantError("grid property violated")
    return rows


def cmd_carleson(a) -> list[dict]:
    ps = _floats(a.p_grid, "p-grid")
    if any(p <= 1 for p in ps):
        raise SchemaError("need p > 1")
    f = make_signal(a.L, a.family, a.seed, a.density)
    Cf, _ = signal.carleson_max(f, HALF_LINE, threads=a.threads)
    rows = []
    for p in ps:
        wn = signal.weak_lorentz_norm(Cf, p)
        fn = signal.lp_norm(np.abs(f.samples), p)
        rows.append({"p": p, "weak_norm": wn, "ratio_pm1": wn / fn * (p - 1)})
    write_csv(rows, ["p", "weak_norm", "ratio_pm1"], a.out)
    if a.svg:
        svg_plot({"R(p)(p-1)": ([1 / (p - 1) for p in ps], [r["ratio_pm1"] for r in rows])}, a.svg, True,
                 "1/(p-1)", "R(p)(p-1)")
    return rows


def _min_scale_mask(L: int, k0: int):
    mask = selection.full_mask(L)
    for k in range(min(k0, L + 1)):
        mask[k][:] = False
    return mask


def cmd_embed(a) -> list[dict]:
    ps = _floats(a.p_grid, "p-grid")
    f = make_signal(a.L, a.family, a.seed, a.density)
    mask = _min_scale_mask(a.L, a.min_scale)
    W = wavepackets.transform_W_all(f)
    curve = sparsedom.embedding_curve(f, ps, mask, t=a.t, F=W)
    w2 = sparsedom.embedding_ratios(f, mask, kind="W2", F=W)
    rows = [{"p": p, "wp_ratio": r, "w2_ratio": w2} for p, r in zip(ps, curve)]
    write_csv(rows, ["p", "wp_ratio", "w2_ratio"], a.out)
    if a.svg:
        svg_plot({"Wp": (ps, curve), "W2": (ps, [w2] * len(ps))}, a.svg, False, "p", "embedding ratio")
    return rows


def default_tops(L: int) -> list[treespace.Top]:
    """Two fixed tops used by ``decompose`` and the acceptance sweep."""
    if L < 4:
        raise SchemaError("decompose needs L >= 4")
    k = max(2, L - 7)
    n = 1 << (L - k)
    g = DyadicGrid(0, 0, L)
    return [treespace.Top(g.interval(k, round(0.16 * n)), Fraction(5, 32) + Fraction(1, 128)),
            treespace.Top(g.interval(k, round(0.7 * n)), Fraction(3, 4) + Fraction(1, 128))]


def tree_tiles(L: int, tops) -> list:
    top = tops[0].interval.scale
    return [P for P in wavepackets.iter_standard_tiles(L)
            if 1 <= P.space.scale <= top and any(treespace.in_tree(P, T, 1) for T in tops)]


def cmd_decompose(a) -> list[dict]:
    Ks = _floats(a.K_grid, "K-grid")
    if any(K < 1 for K in Ks):
        raise SchemaError("need K >= 1")
    f = make_signal(a.L, a.family, a.seed, a.density)
    tops = default_tops(a.L)
    tiles = tree_tiles(a.L, tops)
    mask = selection.tiles_to_mask(a.L, tiles)
    f1 = wavepackets.local_tile_norm(f, tiles, 1.0)
    rows = []
    for K in Ks:
        g, b, rep = multifreq.gb_split(f, tops, mask, a.count, a.p, a.t, K=K)
        err = float(np.abs(g.samples + b.samples - f.samples).max())
        rows.append({"K": K, "tail_ratio": max(rep["tail_sizes"]) / f1, "recon_error": err,
                     "cz_count": rep["cz_count"], "tile_count_ok": rep["tile_count_ok"]})
    write_csv(rows, ["K", "tail_ratio", "recon_error", "cz_count", "tile_count_ok"], a.out)
    if a.svg:
        svg_plot({"tail": (Ks, [r["tail_ratio"] for r in rows])}, a.svg, True, "K", "tail ratio")
    if any(r["recon_error"] > 1e-12 or not r["tile_count_ok"] for r in rows):
        raise InvariantError("g + b != f or tile count bound fails")
    return rows


def _check_collection(col) -> None:
    c = col.checks
    if not (c["disjoint"] and c["covers"] and c["min_E_ratio"] >= 0.5 and c["packing"] <= 0.25):
        raise InvariantError(f"stopping collection invariants fail: {c}")


def sparse_sweep(f1: Signal, f2: Signal, eps_grid: Sequence[float], threads: int | None = None) -> list[dict]:
    """Sparse Carleson ratio over ``eps_grid``; stopping invariants are enforced."""
    Nx = signal.carleson_max(f1, HALF_LINE, threads=threads)[1]
    W = wavepackets.transform_W_all(f1)
    A = wavepackets.transform_A_all(f2, Nx)
    rows = []
    for e in eps_grid:
        rep = sparsedom.sparse_check(f1, f2, e, None, Nx, W=W, A=A)
        _check_collection(rep.collection)
        rows.append({"eps": e, "ratio": rep.ratio, "generations": rep.collection.depth + 1,
                     "theta": rep.collection.theta, "max_depth": rep.collection.depth})
    return rows


def cmd_sparse_check(a) -> list[dict]:
    eps_grid = _floats(a.eps_grid, "eps-grid")
    if any(not 0 < e <= 0.5 for e in eps_grid):
        raise SchemaError("need 0 < eps <= 1/2")
    f1 = make_signal(a.L, a.family, a.seed, a.density1)
    f2 = make_signal(a.L, a.family, a.seed + 1, a.density2)
    rows = sparse_sweep(f1, f2, eps_grid, a.threads)
    write_csv(rows, ["eps", "ratio", "generations", "theta", "max_depth"], a.out)
    if a.svg:
        svg_plot({"ratio": (eps_grid, [r["ratio"] for r in rows])}, a.svg, True, "eps", "sparse ratio")
    if a.detail:
        rep = sparsedom.sparse_check(f1, f2, eps_grid[0], detail=True)
        with open(a.detail, "w", encoding="utf-8") as fh:
            json.dump(rep.per_S, fh, indent=1, sort_keys=True)
    return rows


RANK1_KEYS = {"gamma", "H", "K", "h", "epsilon_grid", "signals"}
RANK1_OPTIONAL = {"L", "scale", "kappa", "Theta"}


def load_rank1_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read config: {e}") from None
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object")
    missing = RANK1_KEYS - cfg.keys()
    extra = cfg.keys() - RANK1_KEYS - RANK1_OPTIONAL
    if missing or extra:
        raise SchemaError(f"config keys: missing {sorted(missing)}, unknown {sorted(extra)}")
    g = cfg["gamma"]
    if not (isinstance(g, list) and len(g) == 3 and all(isinstance(x, (int, float)) for x in g)):
        raise SchemaError("gamma must be three numbers")
    for key in ("H", "h", "L", "scale", "kappa"):
        if key in cfg and not (isinstance(cfg[key], int) and not isinstance(cfg[key], bool)):
            raise SchemaError(f"{key} must be an integer")
    if cfg.get("Theta") is not None and not isinstance(cfg["Theta"], (int, float)):
        raise SchemaError("Theta must be a number")
    if not isinstance(cfg["K"], (int, float)) or cfg["K"] < 1:
        raise SchemaError("K must be a number >= 1")
    cfg.setdefault("L", 10)
    cfg.setdefault("scale", cfg["L"] - 2)
    cfg.setdefault("kappa", rank1.DEFAULT_KAPPA)
    if not 2 <= cfg["L"] <= 14 or not 0 <= cfg["scale"] <= cfg["L"]:
        raise SchemaError("need 2 <= L <= 14 and 0 <= scale <= L")
    eps = cfg["epsilon_grid"]
    if not (isinstance(eps, list) and eps and all(isinstance(e, (int, float)) and 0 < e <= 0.5 for e in eps)):
        raise SchemaError("epsilon_grid must be a nonempty list in (0, 1/2]")
    sig = cfg["signals"]
    if not (isinstance(sig, list) and len(sig) == 3):
        raise SchemaError("signals must list three signal specs")
    for s in sig:
        if not isinstance(s, dict) or "seed" not in s or s.get("family", "indicator") not in FAMILIES:
            raise SchemaError("each signal needs a seed and a known family")
        if set(s) - {"family", "seed", "density"} or not isinstance(s["seed"], int):
            raise SchemaError(f"bad signal spec {s}")
    return cfg


def rank1_map(cfg: dict) -> rank1.Rank1Map:
    L, s = cfg["L"], cfg["scale"]
    tiles = [tile_at(L, s, m, l) for m in range(1 << s) for l in range(1 << (L - s))]
    try:
        return rank1.build_eta_from_gamma(cfg["gamma"], cfg["H"], cfg["K"], cfg["h"], tiles, cfg["kappa"])
    except rank1.UniquenessError as e:
        raise InvariantError(str(e)) from None


def rank1_sweep(cfg: dict, eta: rank1.Rank1Map | None = None) -> list[dict]:
    """Rank-1 sparse ratio over ``cfg["epsilon_grid"]`` at the extremal tuple, for a validated config."""
    L = cfg["L"]
    eta = rank1_map(cfg) if eta is None else eta
    fs = [make_signal(L, sp.get("family", "indicator"), sp["seed"], sp.get("density", 0.25)) for sp in cfg["signals"]]
    Ws = [wavepackets.transform_W_all(f) for f in fs]
    tree = rank1.rank1_tree_ratio(eta, Ws)
    rows = []
    for e in cfg["epsilon_grid"]:
        rep = rank1.rank1_sparse_check(eta, fs, (1 / (1 - e), 2.0, 2.0), cfg.get("Theta"), W=Ws, trees=False)
        _check_collection(rep.collection)
        rows.append({"eps": float(e), "ratio": rep.ratio, "generations": rep.collection.depth + 1,
                     "theta": rep.collection.theta, "tiles": len(eta), "tree_ratio": tree})
    return rows


def cmd_rank1_check(a) -> list[dict]:
    rows = rank1_sweep(load_rank1_config(a.config))
    write_csv(rows, ["eps", "ratio", "generations", "theta", "tiles", "tree_ratio"], a.out)
    if a.svg:
        svg_plot({"ratio": ([r["eps"] for r in rows], [r["ratio"] for r in rows])}, a.svg, True, "eps", "rank-1 ratio")
    if rows[0]["tree_ratio"] > 3.0:
        raise InvariantError(f"tree estimate ratio {rows[0]['tree_ratio']:g} exceeds 3")
    return rows


def _selftests() -> list[tuple[str, Callable[[], float], float]]:
    """(name, measured discrepancy, tolerance) on small exhaustive instances."""
    rng = np.random.default_rng(0)

    def grid():
        return float(sum(dyadic.grid_violations(DyadicGrid(g, 0, 5))[1] for g in (0, 1, 2)))

    def carleson():
        f = Signal(rng.normal(size=32) + 1j * rng.normal(size=32))
        return float(np.abs(signal.carleson_max(f)[0] - signal.carleson_max_bruteforce(f)[0]).max())

    def maximal():
        fs = [Signal(rng.random(32) + 0j), Signal((rng.random(32) < 0.3) + 0j)]
        M, _ = sparsedom.sparse_maximal(fs, (1.5, 1.0))
        return float(np.abs(M - sparsedom.sparse_maximal_bruteforce(fs, (1.5, 1.0))).max())

    def density():
        L = 5
        f = Signal((rng.random(1 << L) < 0.4) + 0j)
        Nx = signal.carleson_max(f)[1]
        tiles = [P for P in wavepackets.iter_standard_tiles(L) if P.space.scale >= 2][:40]
        return abs(selection.density(f, tiles, Nx) - selection.density_bruteforce(f, tiles, Nx))

    def measure():
        L = 4
        J = DyadicGrid(0, 0, L).interval(L, 0)
        every = list(wavepackets.iter_standard_tiles(L))
        worst = 0.0
        for _ in range(10):
            A = [every[i] for i in rng.choice(len(every), 6, replace=False)]
            space = treespace.OuterSpace(J, 1)
            worst = max(worst, treespace.outer_measure(A, space) - treespace.outer_measure(A, space, "greedy"))
        return max(worst, 0.0)

    def projections():
        L = 6
        fam = multifreq.cz_intervals([DyadicGrid(0, 0, L).interval(2, 3)], 1.3, L)
        f = Signal(rng.normal(size=1 << L) + 0j)
        total = sum((multifreq.project(f, P).samples for P in multifreq.minimal_tiles(fam)), np.zeros(1 << L, complex))
        return float(np.abs(total - f.samples).max())

    def tree_size():
        L = 8
        eta = rank1.build_eta_from_gamma((1.0, -2.0, 1.0), 1, 2, 0,
                                         [tile_at(L, 6, m, l) for m in range(64) for l in range(4)])
        W = wavepackets.transform_W_all(Signal((rng.random(1 << L) < 0.3) + 0j))
        T = eta.tiles(0)[:1]
        return abs(rank1.size_2_star_k(eta, W, 1, T) - rank1.size_2_star_k_bruteforce(eta, W, 1, T))

    return [("grid_property", grid, 0.0), ("carleson_max", carleson, 1e-9), ("sparse_maximal", maximal, 1e-12),
            ("density", density, 1e-9), ("outer_measure_greedy", measure, 1e-12),
            ("projection_sum", projections, 1e-12), ("size_2_star_k", tree_size, 1e-12)]


def cmd_selftest(a) -> list[dict]:
    rows = []
    for name, fn, tol in _selftests():
        v = float(fn())
        rows.append({"check": name, "discrepancy": v, "tolerance": tol, "ok": v <= tol})
    write_csv(rows, ["check", "discrepancy", "tolerance", "ok"], a.out)
    if not all(r["ok"] for r in rows):
        raise InvariantError("selftest failed: " + ", ".join(r["check"] for r in rows if not r["ok"]))
    return rows


def cmd_report(a) -> list[dict]:
    series = {}
    rows = []
    for path in a.inputs:
        cols, data = read_csv(path)
        for c in (a.x, a.y):
            if c not in cols:
                raise SchemaError(f"{path}: no column {c!r}")
        try:
            xs = [float(r[a.x]) for r in data]
            ys = [float(r[a.y]) for r in data]
        except ValueError:
            raise SchemaError(f"{path}: non-numeric {a.x}/{a.y}") from None
        if not xs:
            raise SchemaError(f"{path}: no data rows")
        series[os.path.basename(path)] = (xs, ys)
        rows.append({"input": os.path.basename(path), "rows": len(xs), "y_min": min(ys), "y_max": max(ys),
                     "spread": max(ys) / min(ys) if min(ys) > 0 else math.nan, "loglog_slope": loglog_slope(xs, ys)})
    write_csv(rows, ["input", "rows", "y_min", "y_max", "spread", "loglog_slope"], a.out)
    if a.svg:
        svg_plot(series, a.svg, a.loglog, a.x, a.y)
    return rows


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tilebench", description="Time-frequency tile experiments on periodic signals.")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: $TILEBENCH_THREADS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, svg=True):
        p.add_argument("--out", default=None, help="CSV path (default stdout)")
        if svg:
            p.add_argument("--svg", default=None, help="optional SVG plot path")

    def sig(p, L, density=2.0**-5):
        p.add_argument("--L", type=int, default=L)
        p.add_argument("--family", default="indicator", choices=FAMILIES)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--density", type=float, default=density)

    p = sub.add_parser("grid", help="exhaustive nested-or-disjoint check of the shifted grids")
    p.add_argument("--L", type=int, default=6)
    p.add_argument("--shifts", default="0,1,2")
    common(p, svg=False)
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("carleson", help="weak-Lp norm of the Carleson maximal function over a p grid")
    sig(p, 12)
    p.add_argument("--p-grid", default="1.1,1.2,1.4,1.7,2.0")
    common(p)
    p.set_defaults(fn=cmd_carleson)

    p = sub.add_parser("embed", help="Wp embedding ratios over a p grid, with the W2 ratio for contrast")
    sig(p, 8, 2.0**-4)
    p.add_argument("--p-grid", default="1.05,1.1,1.2,1.5,2.0")
    p.add_argument("--t", type=float, default=2.0)
    p.add_argument("--min-scale", type=int, default=2)
    common(p)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("decompose", help="good/bad split tail sizes over a K sweep")
    sig(p, 12)
    p.set_defaults(family="random-phase")
    p.add_argument("--K-grid", default="2,4,8,16")
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--t", type=float, default=2.0)
    p.add_argument("--count", type=float, default=16.0, help="number of trees N")
    common(p)
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("sparse-check", help="sparse Carleson form ratio over an eps grid")
    p.add_argument("--L", type=int, default=10)
    p.add_argument("--family", default="indicator", choices=FAMILIES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--density1", type=float, default=2.0**-3)
    p.add_argument("--density2", type=float, default=2.0**-2)
    p.add_argument("--eps-grid", default="0.5,0.25,0.125,0.0625,0.03125")
    p.add_argument("--detail", default=None, help="JSON path for per-S factors at the first eps")
    common(p)
    p.set_defaults(fn=cmd_sparse_check)

    p = sub.add_parser("rank1-check", help="rank-1 sparse form ratio from a JSON config")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(fn=cmd_rank1_check)

    p = sub.add_parser("selftest", help="small exhaustive oracle comparisons")
    common(p, svg=False)
    p.set_defaults(fn=cmd_selftest)

    p = sub.add_parser("report", help="summarize tilebench CSVs and plot one column against another")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--loglog", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_SCHEMA
    try:
        a.threads = signal.resolve_threads(a.threads)
        if a.threads < 1:
            raise SchemaError("--threads must be positive")
        a.fn(a)
    except (SchemaError, ValueError) as e:
        print(f"tilebench: error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (NumericalError, sparsedom.PackingError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"tilebench: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvariantError as e:
        print(f"tilebench: invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
