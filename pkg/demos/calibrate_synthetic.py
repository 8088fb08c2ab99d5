"""Simulate a market from known parameters and calibrate it back.

The binned impact slope estimates theta * G0(1), not theta alone, so the
product theta * G0(l) is the quantity to compare.
"""

import warnings

import numpy as np

from transient_exec import calibration as cal
from transient_exec.errors import DataWarning
from transient_exec.presets import PRESETS
from transient_exec.simulator import MarketSpec, simulate_market

p = PRESETS["AZN"]
spec = MarketSpec(theta=p.theta, kernel=p.kernel, sigma=18.7, intervals_per_day=100,
                  n_days=500, seed=11)
series = simulate_market(spec)

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DataWarning)
    model, emp = cal.calibrate(series, k_max=50)

lags = np.array([1, 2, 5, 10, 20, 50])
print(f"intervals: {len(series)}")
print(f"theta  true {p.theta:6.2f}  fit {model.impact.theta:6.2f}")
print(f"sigma2 true {18.7**2:6.1f}  fit {model.sigma2:6.1f}")
print("lag   theta*G0 true   fit   empirical")
for l in lags:
    print(f"{l:3d}   {p.theta * p.kernel(l):13.2f} {model.impact.theta * model.kernel(l):6.2f}"
          f" {model.impact.theta * emp.G0_tab[l]:9.2f}")
