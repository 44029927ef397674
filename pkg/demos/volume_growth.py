"""Volume growth forced by a sharp CKN inequality.

Runs the staged check on three unbounded spaces: Euclidean space and an
l4 Minkowski space carry the inequality with C = K_a and meet the lower
volume bound with equality, while the round cylinder S^2 x R grows only
linearly, so the constant it would need keeps increasing with the radius.

    python demos/volume_growth.py
"""

import numpy as np

from ckn.core import make_params, sharp_constant
from ckn.minkowski import lq
from ckn.mmspace import builtin_space
from ckn.qengine import growth_pipeline

P = make_params(3, 0.25)
K = sharp_constant(P).value
rho = np.array([1.0, 10.0, 100.0, 1000.0])

spaces = [builtin_space("euclidean", 3), builtin_space("minkowski", lq(4.0, 3)),
          builtin_space("cylinder", 3)]

for space in spaces:
    rep = growth_pipeline(space, P, K, 1.0, rho_grid=rho)
    print(f"\n{space.name}: {'passes' if rep.passed else 'fails'}")
    for s in rep.stages:
        print(f"  {s.name:<12} {'ok ' if s.passed else 'NO '} {s.message}")
    implied = rep.stage("lower_bound").details["implied_C"]
    print("  implied C at rho = " + ", ".join(f"{r:g}: {c:.4g}" for r, c in zip(rho, implied)))
