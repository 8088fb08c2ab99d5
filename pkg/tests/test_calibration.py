import warnings

import numpy as np
import pytest

from transient_exec import calibration as cal
from transient_exec.errors import (DataWarning, DegenerateBins, InsufficientData,
                                   SingularDesign)
from transient_exec.impact_model import PowerLawKernel, TabulatedKernel
from transient_exec.market_data import IntervalSeries, Quotes, RealTime
from transient_exec.simulator import MarketSpec, simulate_market


def make_series(v_nor, r_bp, W=1e4, per_day=None):
    n = len(v_nor)
    per_day = per_day or n
    idx = np.arange(n)
    return IntervalSeries(day_id=idx // per_day, interval_index=idx % per_day,
                          p_open=np.zeros(n), r=np.asarray(r_bp) / 1e4,
                          v=np.asarray(v_nor) * W, v_nor=np.asarray(v_nor),
                          W=np.full(n, float(W)), scheme=RealTime(300.0))


def test_equal_population_bins():
    rng = np.random.default_rng(0)
    x = rng.normal(size=103)
    y = 2 * x
    cx, cy, cnt = cal.equal_population_bins(x, y, 10)
    assert cnt.sum() == 103 and cnt.max() - cnt.min() <= 1
    assert np.all(np.diff(cx) > 0)
    xs = np.sort(x)
    assert cx[0] == pytest.approx(xs[:cnt[0]].mean())
    assert np.allclose(cy, 2 * cx)


def test_linear_theta_exact_without_noise():
    rng = np.random.default_rng(1)
    v = rng.uniform(-1, 1, 500)
    imp = cal.estimate_impact_function(make_series(v, 12.5 * v), n_bins=20)
    assert imp.theta == pytest.approx(12.5, rel=1e-12)
    assert imp(0.5) == pytest.approx(6.25)


def test_linear_theta_matches_pooled_bin_formula():
    rng = np.random.default_rng(2)
    v = rng.uniform(-1, 1, 300)
    r = 10 * v + rng.normal(0, 5, 300)
    imp = cal.estimate_impact_function(make_series(v, r), n_bins=15)
    xp, yp = np.concatenate([v, -v]), np.concatenate([r, -r])
    order = np.argsort(xp, kind="stable")
    num = den = 0.0
    for g in np.array_split(order, 15):
        num += len(g) * xp[g].mean() * yp[g].mean()
        den += len(g) * xp[g].mean() ** 2
    assert imp.theta == pytest.approx(num / den, rel=1e-12)
    assert imp.theta_se > 0


def test_arctan_recovers_noiseless_parameters():
    rng = np.random.default_rng(3)
    W = 1e4
    v = rng.uniform(-1, 1, 2000)
    r = 8.0 * np.arctan(3e-4 * v * W)
    imp = cal.estimate_impact_function(make_series(v, r, W), n_bins=40, form="arctan")
    # bins average arctan over their members, so recovery is close but not exact
    assert imp.theta == pytest.approx(8.0, rel=1e-2)
    assert imp.rho == pytest.approx(3e-4, rel=1e-2)


def test_degenerate_bins():
    with pytest.raises(DegenerateBins):
        cal.estimate_impact_function(make_series(np.full(50, 0.3), np.ones(50)))


def test_regression_exact_without_noise():
    # finite memory (g = 0 past lag 15) so k_max = 20 omits nothing
    k = TabulatedKernel(PowerLawKernel(1.2, 3.0, 0.4).table(15)[1:])
    s = simulate_market(MarketSpec(theta=20.0, kernel=k, sigma=0.0, intervals_per_day=60,
                                   n_days=40, seed=4))
    imp = cal.ImpactFunctionFit("linear", 20.0, 0.0)
    emp = cal.regress_propagator(s, imp, k_max=20)
    assert np.allclose(emp.G0_tab, k.table(20), atol=1e-10)
    assert cal.r_squared(s, imp, emp) == pytest.approx(1.0)
    assert cal.estimate_noise_variance(s, imp, emp).sigma2 == pytest.approx(0.0, abs=1e-16)


def test_regression_row_selection_by_hand():
    # two days of 4 intervals, k_max = 2: rows j = 1, 2, 3 of each day
    v = np.array([1.0, -1.0, 0.5, 0.2, -0.3, 0.4, 1.0, -0.6] * 10)
    g_true = np.array([2.0, 0.7])
    r = np.zeros_like(v)
    for day in range(len(v) // 4):
        f = v[4 * day:4 * day + 4]
        r[4 * day:4 * day + 4] = np.convolve(f, g_true)[:4]
    r[0::4] += 100.0  # first rows lack history and must be ignored
    s = make_series(v, r, per_day=4)
    emp = cal.regress_propagator(s, cal.ImpactFunctionFit("linear", 1.0, 0.0), k_max=2)
    assert np.allclose(emp.g, g_true)
    assert emp.n_obs == 60


def test_singular_design():
    s = make_series(np.full(600, 0.5), np.zeros(600), per_day=100)
    with pytest.raises(SingularDesign) as e:
        cal.regress_propagator(s, cal.ImpactFunctionFit("linear", 1.0, 0.0), k_max=5)
    assert e.value.condition_number > cal.MAX_CONDITION


def test_insufficient_data():
    s = make_series(np.linspace(-1, 1, 40), np.zeros(40))
    with pytest.raises(InsufficientData):
        cal.regress_propagator(s, cal.ImpactFunctionFit("linear", 1.0, 0.0), k_max=10)


def test_r2_nested_in_k_max():
    s = simulate_market(MarketSpec(theta=20.0, kernel=PowerLawKernel(1.0, 2.0, 0.5),
                                   sigma=15.0, intervals_per_day=80, n_days=30, seed=5))
    imp = cal.estimate_impact_function(s)
    r2 = [cal.r_squared(s, imp, cal.regress_propagator(s, imp, k, history=30))
          for k in (1, 5, 10, 30)]
    assert all(0 <= x <= 1 for x in r2)
    assert all(b >= a - 1e-15 for a, b in zip(r2, r2[1:]))


def test_noise_variance_pure_noise():
    s = simulate_market(MarketSpec(theta=0.0, kernel=PowerLawKernel(1.0, 1.0, 0.5),
                                   sigma=10.0, intervals_per_day=100, n_days=100, seed=6))
    imp = cal.ImpactFunctionFit("linear", 1.0, 0.0)
    emp = cal.regress_propagator(s, imp, k_max=10)
    assert cal.estimate_noise_variance(s, imp, emp).sigma2 == pytest.approx(100.0, rel=0.05)


@pytest.mark.parametrize("params", [(1.07, 4.0, 0.075), (1.40, 20.0, 0.19),
                                    (1.01, 0.41, 0.23), (0.8, 2.0, 0.9), (1.5, 0.0, 0.5)])
def test_fit_kernel_noiseless(params):
    k = PowerLawKernel(*params)
    fit = cal.fit_kernel(k.table(50))
    assert fit.ok
    assert fit.gamma0 == pytest.approx(params[0], rel=1e-4)
    assert fit.l0 == pytest.approx(params[1], rel=1e-4, abs=1e-6)
    assert fit.beta == pytest.approx(params[2], rel=1e-4)


def test_fit_kernel_grid_oracle():
    # the refined fit can be no worse than the best grid node
    rng = np.random.default_rng(7)
    k = PowerLawKernel(1.1, 5.0, 0.3)
    tab = k.table(40) + np.concatenate([[0.0], rng.normal(0, 0.01, 40)])
    fit = cal.fit_kernel(tab)
    lags = np.arange(1, 41)
    best = np.inf
    for l0 in np.linspace(0, 20, 81):
        for b in np.linspace(0, 1.5, 61):
            basis = (l0 * l0 + lags * lags) ** (-b / 2)
            g = basis @ tab[1:] / (basis @ basis)
            best = min(best, float(((tab[1:] - g * basis) ** 2).sum()))
    assert fit.residual_norm ** 2 <= best * (1 + 1e-9)


def test_fit_kernel_needs_lags():
    with pytest.raises(InsufficientData):
        cal.fit_kernel(np.array([0.0, 1.0, 0.9]))


def test_fit_kernel_flags_bad_shape():
    tab = np.concatenate([[0.0], np.sin(np.arange(1, 30))])
    with pytest.warns(DataWarning):
        fit = cal.fit_kernel(tab)
    assert not fit.ok


def test_spread_time_weighted():
    q = Quotes(np.zeros(3, np.int64), np.array([0, 10, 40]), np.array([99.0, 99.5, 99.0]),
               np.array([101.0, 100.5, 101.0]))
    est = cal.estimate_spread(q, session={0: (0, 50)})
    rel = np.array([0.01, 0.005, 0.01])
    assert est.delta == pytest.approx(1e4 * (rel @ [10, 30, 10]) / 50)


def test_spread_excludes_crossed():
    q = Quotes(np.zeros(3, np.int64), np.array([0, 10, 20]), np.array([99.0, 102.0, 99.0]),
               np.array([101.0, 100.0, 101.0]))
    with pytest.warns(DataWarning):
        est = cal.estimate_spread(q)
    assert est.n_crossed == 1
    assert est.delta == pytest.approx(100.0)


def test_calibrated_model_json_round_trip(tmp_path):
    s = simulate_market(MarketSpec(theta=20.0, kernel=PowerLawKernel(1.0, 2.0, 0.5),
                                   sigma=10.0, intervals_per_day=80, n_days=20, seed=8))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        model, _ = cal.calibrate(s, delta=3.0, k_max=20)
    assert model.n_intervals == 80
    model.to_json(tmp_path / "m.json")
    back = cal.CalibratedModel.from_json(tmp_path / "m.json")
    assert back.kernel == model.kernel
    assert back.sigma2 == model.sigma2 and back.delta == 3.0
    assert back.scheme == model.scheme
    cm = back.cost_model(10)
    assert cm.n == 10 and cm.theta == pytest.approx(model.impact.theta)


def test_tabulated_calibration_and_arctan_linearization():
    s = simulate_market(MarketSpec(theta=20.0, kernel=PowerLawKernel(1.0, 2.0, 0.5),
                                   sigma=10.0, intervals_per_day=80, n_days=20, seed=9))
    model, emp = cal.calibrate(s, k_max=20, fit_parametric=False)
    assert isinstance(model.kernel, TabulatedKernel)
    assert np.allclose(model.kernel.table(20), emp.G0_tab)
    m = cal.CalibratedModel(cal.ImpactFunctionFit("arctan", 5.0, 0.0, 2e-4), model.kernel,
                            1.0, 1.0, 20, None, 1e4)
    assert m.linear_theta() == pytest.approx(5.0 * 2e-4 * 1e4)


def test_unsupported_schema_version():
    with pytest.raises(ValueError):
        cal.CalibratedModel.from_dict({"schema_version": 99})
