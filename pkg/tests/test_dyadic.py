from fractions import Fraction
import itertools

import pytest
from hypothesis import given, strategies as st

from tilebench.dyadic import (
    DyadicGrid, ScaleError, ShiftedFamily, Tile, children, contains, order_leq,
    order_leq_prime, parent, parent_clamped, parse_interval, parse_tile, shifted_cover, sibling,
    standard_grids, tile_at,
)


def ivs(grid):
    return [I for k in range(grid.k_min, grid.k_max + 1) for I in grid.intervals(k)]


def point_set(I, res=Fraction(1, 3)):
    """Membership oracle: the grid of points of spacing ``res`` covered by I."""
    out = set()
    for a, b in I.pieces():
        x = Fraction(math_ceil(a / res)) * res
        while x < b:
            out.add(x)
            x += res
    return frozenset(out)


def math_ceil(q):
    return -((-q.numerator) // q.denominator)


def test_parent_examples():
    g = DyadicGrid(0, 0, 4)
    assert parent(g.interval(0, 0), 2) == g.interval(2, 0)
    I = parent(g.interval(0, 3), 1)
    assert (I.left, I.right) == (2, 4)


def test_parent_shifted_grid():
    g = DyadicGrid(1, 0, 6)
    I = g.interval(1, 3)
    assert (I.left, I.right) == (Fraction(16, 3), Fraction(22, 3))
    J = parent(I)
    assert J.length == 4
    assert J.left <= I.left and I.right <= J.right
    # unique length-4 member containing it
    hits = [K for K in g.intervals(2) if K.left <= I.left and I.right <= K.right]
    assert hits == [J]


def test_parent_overflow():
    g = DyadicGrid(0, 0, 3)
    with pytest.raises(ScaleError):
        parent(g.interval(2, 0), 2)
    with pytest.raises(ScaleError):
        children(g.interval(0, 0), 1)


def test_children_examples():
    g = DyadicGrid(0, 0, 4)
    kids = children(g.interval(2, 0), 2)
    assert [(c.left, c.right) for c in kids] == [(0, 1), (1, 2), (2, 3), (3, 4)]
    assert children(g.interval(0, 0), 0) == [g.interval(0, 0)]
    a, b = children(g.interval(3, 1), 1)
    assert (a.left, a.right, b.left, b.right) == (8, 12, 12, 16)


def test_sibling_examples():
    g = DyadicGrid(0, 0, 4)
    assert sibling(g.interval(0, 0)) == g.interval(0, 1)
    assert sibling(g.interval(0, 1)) == g.interval(0, 0)
    assert sibling(g.interval(0, 2)) == g.interval(0, 3)


@pytest.mark.parametrize("shift", [0, 1, 2])
def test_grid_property_exhaustive(shift):
    g = DyadicGrid(shift, 0, 5)
    all_iv = ivs(g)
    pts = {I: point_set(I) for I in all_iv}
    universe = point_set(g.interval(g.k_max, 0))
    for k in range(g.k_max + 1):
        cover = [pts[I] for I in g.intervals(k)]
        assert sum(len(c) for c in cover) == len(universe)
        assert frozenset().union(*cover) == universe
    for I, J in itertools.combinations(all_iv, 2):
        inter = pts[I] & pts[J]
        assert inter in (frozenset(), pts[I], pts[J])
        # combinatorial containment agrees with the geometric oracle
        if I.scale <= J.scale:
            assert contains(J, I) == (inter == pts[I])


@pytest.mark.parametrize("shift", [0, 1, 2])
def test_parent_children_roundtrip(shift):
    g = DyadicGrid(shift, 0, 6)
    for I in ivs(g):
        for kap in range(0, g.k_max - I.scale + 1):
            assert I in children(parent(I, kap), kap)
        for kap in range(0, I.scale + 1):
            kids = children(I, kap)
            assert len(set(kids)) == 2**kap
            assert all(parent(c, kap) == I for c in kids)
            assert sum(c.length for c in kids) == I.length


def test_tile_product_and_parse():
    sg, fg = standard_grids(4)
    P = tile_at(4, 2, 3, 1)
    assert P.space.length * P.freq.length == 1
    assert parse_tile(str(P), sg, fg) == P
    assert parse_interval("0:2:1", sg) == P.space
    with pytest.raises(ValueError):
        Tile(sg.interval(1, 0), fg.interval(-2, 0))
    with pytest.raises(ValueError):
        parse_interval("1:2:1", sg)


def test_order_examples():
    sg, fg = standard_grids(3)
    P = Tile(sg.interval(0, 0), fg.interval(0, 0))
    Q = Tile(sg.interval(1, 0), fg.interval(-1, 0))
    assert order_leq(P, P, 1)
    assert order_leq(P, Q, 1)
    R = Tile(sg.interval(0, 1), fg.interval(0, 0))
    S = Tile(sg.interval(0, 2), fg.interval(0, 0))
    assert not order_leq(R, S, 1) and not order_leq(S, R, 1)


def _tiles(L):
    return [tile_at(L, k, m, l) for k in range(L + 1) for l in range(1 << (L - k)) for m in range(1 << k)]


TILES4 = _tiles(4)


@given(st.sampled_from(TILES4), st.sampled_from(TILES4), st.sampled_from(TILES4), st.integers(1, 3))
def test_order_is_partial(P, Q, R, kappa):
    assert order_leq(P, P, kappa)
    if order_leq(P, Q, kappa) and order_leq(Q, P, kappa):
        # a preorder: mutual comparability only identifies tiles with a common kappa-parent
        assert P.space == Q.space
        assert parent_clamped(P.freq, kappa) == parent_clamped(Q.freq, kappa)
    if order_leq(P, Q, kappa) and order_leq(Q, R, kappa):
        assert order_leq(P, R, kappa)
    if order_leq_prime(P, Q, kappa):
        assert order_leq(P, Q, kappa) and not order_leq(P, Q, 1)


def test_shifted_cover_example():
    j, (a, b) = shifted_cover(Fraction(1, 10), Fraction(105, 100), 3)
    ell = Fraction(95, 100)
    assert a <= Fraction(1, 10) and Fraction(105, 100) <= b
    assert b - a <= Fraction(106875, 100000) * ell
    assert (a, b) == ShiftedFamily(3).interval(j, _scale_of(3, j, b - a), _pos(3, j, a, b - a))


def _scale_of(M, j, length):
    fam = ShiftedFamily(M)
    rho = fam.rho(j >> fam.W)
    k = 0
    while rho * Fraction(2) ** k < length:
        k += 1
    while rho * Fraction(2) ** k > length:
        k -= 1
    return k


def _pos(M, j, left, length):
    fam = ShiftedFamily(M)
    k = _scale_of(M, j, length)
    return int((left / length) - fam.phi(j & ((1 << fam.W) - 1), k))


def _scan_cover(lo, hi, M):
    """Brute-force oracle: scan every grid of the family and return the shortest cover length."""
    fam = ShiftedFamily(M)
    best = None
    for j in range(fam.size):
        a, c = divmod(j, 1 << fam.W)
        rho = fam.rho(a)
        for k in range(-6, 6):
            length = rho * Fraction(2) ** k
            if length < hi - lo:
                continue
            phi = fam.phi(c, k)
            l = math_floor(lo / length - phi)
            left = length * (l + phi)
            if hi <= left + length and (best is None or length < best):
                best = length
            break
    return best


def math_floor(q):
    return q.numerator // q.denominator


@pytest.mark.parametrize("lo,hi", [(Fraction(1, 10), Fraction(105, 100)), (Fraction(3, 7), Fraction(5, 2)), (Fraction(0), Fraction(1, 3))])
def test_shifted_cover_matches_scan(lo, hi):
    M = 2
    j, (a, b) = shifted_cover(lo, hi, M)
    assert b - a == _scan_cover(lo, hi, M)
    assert b - a <= (1 + Fraction(1, 4)) * (hi - lo)


@given(st.fractions(min_value=-8, max_value=8, max_denominator=64), st.fractions(min_value=Fraction(1, 64), max_value=5, max_denominator=64), st.integers(0, 4))
def test_shifted_cover_bound(lo, ell, M):
    j, (a, b) = shifted_cover(lo, lo + ell, M)
    assert a <= lo and lo + ell <= b
    assert b - a <= (1 + Fraction(1, 2**M)) * ell
    assert 0 <= j < ShiftedFamily(M).size


def test_shifted_cover_grid_member_is_itself():
    fam = ShiftedFamily(2)
    for j in (0, 5, 37, fam.size - 1):
        a, b = fam.interval(j, 1, 3)
        jj, (aa, bb) = shifted_cover(a, b, 2)
        assert (aa, bb) == (a, b)


def test_shifted_cover_rejects_long_interval():
    with pytest.raises(ValueError):
        shifted_cover(0, 10, 2, torus=8)
