"""
Sparse domination of the Carleson form, step by step
====================================================

1. build the iterated stopping collection for q = (1/(1-eps), 1);
2. split the tiles by the stopping interval that owns them;
3. compare eps * form with the L^1 norm of the sparse maximal function.
"""

from tilebench.cli import make_signal
from tilebench.signal import HALF_LINE, carleson_max
from tilebench.sparsedom import sparse_check, stopping_collection
from tilebench.wavepackets import transform_A_all, transform_W_all

L = 10
f1 = make_signal(L, "indicator", 0, 2.0**-8)  # sparse f1 forces stopping
f2 = make_signal(L, "indicator", 1, 2.0**-2)

# the stopping tree for one eps
col = stopping_collection(f1, f2, eps=0.25)
print(f"{len(col)} stopping intervals, depth {col.depth}, Theta = {col.theta:g}")
for key in ("disjoint", "covers", "min_E_ratio", "packing"):
    print(f"  {key:12s} {col.checks[key]}")

# one linearization of the Carleson maximal function serves every eps
Nx = carleson_max(f1, HALF_LINE)[1]
W, A = transform_W_all(f1), transform_A_all(f2, Nx)

print("\n  eps       ratio     form/||M||_1  nodes")
for j in range(1, 6):
    eps = 2.0**-j
    rep = sparse_check(f1, f2, eps, None, Nx, W=W, A=A)
    print(f"  {eps:<8}  {rep.ratio:.4f}    {rep.form / rep.maximal_l1:.4f}        {len(rep.collection)}")

# the form is fixed; ||M_q||_1 shrinks as q -> 1, but more slowly than eps
