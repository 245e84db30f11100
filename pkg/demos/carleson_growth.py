"""
Weak-type growth of the Carleson maximal operator
=================================================

For f = 1_F on the torus Z / 2^L Z we compute the maximal partial Fourier
sum Cf and the ratio R(p) = ||Cf||_{p,inf} / ||f||_p.  The general upper
bound grows like 1/(p-1) as p -> 1; indicators sit far below it.
"""

import numpy as np

from tilebench.cli import make_signal
from tilebench.signal import HALF_LINE, Signal, carleson_max, lp_norm, weak_lorentz_norm

L = 12
N = 1 << L
ps = np.array([1.1, 1.2, 1.4, 1.7, 2.0])


def ratios(f):
    Cf, _ = carleson_max(f, HALF_LINE)
    return np.array([weak_lorentz_norm(Cf, p) / lp_norm(np.abs(f.samples), p) for p in ps])


# scattered sets of decreasing size
print("scattered F, |F| = 2^-d N")
print("  d   " + "  ".join(f"p={p:<4}" for p in ps))
for d in range(3, 9):
    R = ratios(make_signal(L, "indicator", 7, 2.0**-d))
    print(f"  {d}   " + "  ".join(f"{r:6.3f}" for r in R))

# a single interval: Cf decays like |F|/dist, the same picture
a = np.zeros(N, complex)
a[: N >> 6] = 1
print("interval of length N/64:", np.round(ratios(Signal(a)), 3))

# Cf >= |f| pointwise, so the level set at height 1 already gives ||f||_p
f = make_signal(L, "indicator", 7, 2.0**-5)
Cf, _ = carleson_max(f)
print("min of Cf on F:", float(Cf[np.abs(f.samples) > 0].min()))

# unimodular samples behave the same way; a sum of wave packets does not
for family in ("random-phase", "packet-sum"):
    R = ratios(make_signal(L, family, 7))
    print(f"{family:13s}", np.round(R, 3), " R(p)(p-1):", np.round(R * (ps - 1), 3))
