"""Flat, U-shaped and oscillating schedules for a 1% participation order."""

import numpy as np

from transient_exec import optimizer as opt
from transient_exec.presets import PRESETS

for sym, p in PRESETS.items():
    m = p.cost_model()
    X = 0.01 * m.W.sum()
    out = opt.compare_strategies(m, X)
    print(f"{sym}  N={m.n}  delta={p.delta} bp")
    for name, (sched, rep) in out.items():
        print(f"  {name:12s} impact {rep.frac_impact:7.2f} bp  spread {rep.frac_spread:7.2f} bp"
              f"  first/mid/last {sched.v[0] / X:.3f} {sched.v[m.n // 2] / X:.3f}"
              f" {sched.v[-1] / X:.3f}")
    u = out["u_shaped"][0].v
    print(f"  U-shaped trades nothing in {int(np.sum(np.abs(u) < 1e-9 * X))} intervals")
