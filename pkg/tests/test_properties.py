"""Structural invariants checked on random inputs (100 hypothesis examples each)."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from transient_exec import optimizer as opt
from transient_exec import simulator as sim
from transient_exec.calibration import ImpactFunctionFit, estimate_impact_function
from transient_exec.errors import NonConvexImpactMatrix
from transient_exec.impact_model import (PowerLawKernel, build_cost_model, cost_variance,
                                         effective_propagator, expected_cost, impact_cost,
                                         spread_cost, variance_matrix)
from transient_exec.market_data import IntervalSeries

N_CASES = 100

kernels = st.builds(PowerLawKernel, st.floats(0.1, 3.0), st.floats(0.0, 30.0),
                    st.floats(0.0, 1.9))
seeds = st.integers(0, 2**32 - 1)


def model_from(kernel, seed, n, delta=None):
    rng = np.random.default_rng(seed)
    try:
        return build_cost_model(kernel, rng.uniform(1, 40), rng.uniform(1e3, 1e5),
                                rng.uniform(0, 1000),
                                rng.uniform(0, 10) if delta is None else delta, n)
    except NonConvexImpactMatrix:
        return None


@settings(max_examples=N_CASES)
@given(seed=seeds, n=st.integers(1, 60), sigma2=st.floats(0.0, 1e3))
def test_variance_convention_offset(seed, n, sigma2):
    v = np.random.default_rng(seed).normal(0, 100, n)
    X = v.sum()
    strict = sigma2 * np.sum(sim.noise_loadings(v, "strict") ** 2)
    inclusive = sigma2 * np.sum(sim.noise_loadings(v, "inclusive") ** 2)
    assert strict == pytest.approx(v @ variance_matrix(n, sigma2) @ v, rel=1e-9, abs=1e-6)
    assert inclusive - strict == pytest.approx(sigma2 * X * X, rel=1e-9, abs=1e-6)


@settings(max_examples=N_CASES)
@given(kernel=kernels, seed=seeds, n=st.integers(1, 40), c=st.floats(-50, 50))
def test_cost_homogeneity(kernel, seed, n, c):
    m = model_from(kernel, seed, n)
    assume(m is not None)
    v = np.random.default_rng(seed + 1).normal(0, 100, n)
    assert impact_cost(m, c * v) == pytest.approx(c * c * impact_cost(m, v), rel=1e-9, abs=1e-9)
    assert cost_variance(m, c * v) == pytest.approx(c * c * cost_variance(m, v), rel=1e-9,
                                                    abs=1e-9)
    assert spread_cost(m, c * v) == pytest.approx(abs(c) * spread_cost(m, v), rel=1e-12,
                                                  abs=1e-12)


@settings(max_examples=N_CASES)
@given(theta=st.floats(0.1, 50), rho=st.floats(1e-6, 1.0),
       x=st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20))
def test_impact_function_is_odd(theta, rho, x):
    x = np.array(x)
    for f in (ImpactFunctionFit("linear", theta, 0.0), ImpactFunctionFit("arctan", theta, 0.0, rho)):
        assert np.array_equal(f(-x), -f(x))


@settings(max_examples=N_CASES)
@given(seed=seeds, n=st.integers(20, 200), form=st.sampled_from(["linear", "arctan"]))
def test_impact_estimate_invariant_under_mirroring(seed, n, form):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, n)
    r = 10 * v + rng.normal(0, 3, n)

    def series(vv, rr):
        z = np.zeros(n, np.int64)
        return IntervalSeries(z, np.arange(n), np.zeros(n), rr / 1e4, vv * 100, vv,
                              np.full(n, 100.0))

    a = estimate_impact_function(series(v, r), 10, "linear")
    b = estimate_impact_function(series(-v, -r), 10, "linear")
    assert a.theta == pytest.approx(b.theta, rel=1e-9)


@settings(max_examples=N_CASES)
@given(kernel=kernels, n=st.integers(1, 200))
def test_effective_propagator_recurrence(kernel, n):
    gt = effective_propagator(kernel, n)
    g0 = kernel.table(n)
    assert gt[0] == pytest.approx(0.5 * kernel(1), rel=1e-15)
    for k in range(1, n):
        assert gt[k] == pytest.approx(0.5 * (g0[k] + g0[k + 1]), rel=1e-15)


@settings(max_examples=N_CASES)
@given(kernel=kernels, seed=seeds, n=st.integers(1, 12), X=st.floats(-1e6, 1e6),
       lam=st.sampled_from([0.0, 1e-9, 1e-7, 1e-5]))
def test_schedules_sum_to_order(kernel, seed, n, X, lam):
    m = model_from(kernel, seed, n)
    assume(m is not None)
    for v in (opt.solve_closed_form(m, X, lam).v, opt.bertsimas_lo_flat(X, n).v,
              opt.almgren_chriss_schedule(X, n, n, lam, m.sigma2 + 1.0, 1e-3).v):
        assert v.sum() == pytest.approx(X, rel=1e-12, abs=1e-9)
    v, _ = opt.solve_with_spread(m, opt.OptimizationConfig(lam=lam, X=X))
    assert v.v.sum() == pytest.approx(X, rel=1e-12, abs=1e-9)


@settings(max_examples=N_CASES)
@given(seed=seeds, phi=st.floats(0.0, 0.95), days=st.integers(1, 3))
def test_market_seed_determinism(seed, phi, days):
    spec = sim.MarketSpec(theta=10.0, kernel=PowerLawKernel(1.0, 2.0, 0.4), sigma=5.0,
                          phi=phi, intervals_per_day=30, n_days=days, seed=seed)
    a, b = sim.simulate_market(spec), sim.simulate_market(spec)
    assert np.array_equal(a.r, b.r) and np.array_equal(a.v, b.v)


@settings(max_examples=N_CASES)
@given(seed=seeds, n=st.integers(1, 30))
def test_execution_seed_determinism(seed, n):
    m = build_cost_model(PowerLawKernel(1.0, 2.0, 0.4), 10.0, 1e4, 100.0, 1.0, n)
    v = np.random.default_rng(seed).normal(0, 50, n)
    a = sim.execution_costs(m, v, 50, seed=seed)
    b = sim.execution_costs(m, v, 50, seed=seed)
    assert np.array_equal(a, b)
    rep = expected_cost(m, v)
    assert np.isfinite(rep.expected_cost)
