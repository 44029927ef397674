"""Why the grid CKN ratio of the truncated extremal sits below K_a.

The extremal decays like rho^(2-n), so a large share of its Dirichlet
energy lives far from the origin.  Cutting it off at radius R and tapering
it to zero changes the quotient by an amount that shrinks only like 1/R.
The one-dimensional radial quotient shows this directly; the 3D grid
values at the default box (L = 8) land on the same deficit.

    python demos/truncation_study.py          # radial study only
    python demos/truncation_study.py --grid   # adds 3D grids, about a minute
"""

import sys

import numpy as np

from ckn.core import extremal_profile, make_params, sharp_constant
from ckn.minkowski import euclidean, lq
from ckn.symmetrize import ckn_test, truncated_extremal
from ckn.variational import RadialProfile, rayleigh_quotient


def taper(t, start=0.9):
    ramp = np.cos(0.5 * np.pi * np.clip((t - start) / (1.0 - start), 0.0, 1.0)) ** 2
    return np.where(t < start, 1.0, ramp)


def radial_deficit(P, R, nodes=20000):
    g = np.concatenate([[0.0], np.geomspace(1e-5, R, nodes)])
    v = np.maximum(extremal_profile(P, 1.0, g) - extremal_profile(P, 1.0, R), 0.0) * taper(g / R)
    q = rayleigh_quotient(P, RadialProfile(g, v, 2.0 - P.n))
    return sharp_constant(P).inverse / q - 1.0


def energy_share_beyond(P, r, R=1e6, nodes=20000):
    g = np.geomspace(1e-6, R, nodes)
    h = extremal_profile(P, 1.0, g)
    dens = np.gradient(h, g) ** 2 * g ** (P.n - 1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(g))])
    return 1.0 - np.interp(r, g, cum) / cum[-1]


if __name__ == "__main__":
    for a in (0.0, 0.5):
        P = make_params(3, a)
        print(f"a={a}: share of the extremal's gradient energy beyond rho=8: "
              f"{energy_share_beyond(P, 8.0):.1%}")
        for R in (7.9, 16, 32, 64, 128, 1024):
            print(f"  truncation radius {R:>6g}: ratio/K_a - 1 = {radial_deficit(P, R):+.4f}")
    if "--grid" in sys.argv:
        print("\n3D grid, default box L = 8")
        for a in (0.0, 0.5):
            P = make_params(3, a)
            K = sharp_constant(P).value
            for name, norm in (("l2", euclidean(3)), ("l4", lq(4.0, 3))):
                vals = [ckn_test(P, truncated_extremal(P, norm, m=m)).ratio / K - 1
                        for m in (64, 128, 256)]
                print(f"  a={a} {name}: m=64/128/256 -> "
                      + " / ".join(f"{x:+.4f}" for x in vals))
