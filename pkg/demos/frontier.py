"""Efficient frontier under the propagator model against the Almgren-Chriss baseline."""

import numpy as np

from transient_exec import optimizer as opt
from transient_exec.presets import PRESETS

m = PRESETS["AZN"].cost_model()
X = 0.01 * m.W.sum()
lc = opt.characteristic_lambda(m, X)
lams = [0.0] + list(lc * np.logspace(-2, 2, 5))

prop = opt.efficient_frontier(m, X, lams)
ac = opt.almgren_chriss_frontier(m, X, lams)
print("lam/lam_c    optimal: cost  sd      AC: cost  sd      optimal at AC variance")
for a, b in zip(prop, ac):
    q = opt.match_variance(m, X, b.variance) or prop[0]
    print(f"{a.lam / lc:9.3g}  {a.expected_cost:12.2f} {np.sqrt(a.variance):5.1f}"
          f"  {b.expected_cost:11.2f} {np.sqrt(b.variance):5.1f}  {q.expected_cost:10.2f}")
