import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from transient_exec.errors import DataWarning, NonConvexImpactMatrix
from transient_exec.impact_model import PowerLawKernel, build_cost_model

settings.register_profile(
    "default", max_examples=100, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def random_model(rng, n, delta=None, sigma2=None, vary_W=False):
    """Random positive-definite cost model (redraws until one is accepted)."""
    while True:
        kernel = PowerLawKernel(rng.uniform(0.5, 2.0), rng.uniform(0.0, 20.0),
                                rng.uniform(0.05, 1.2))
        W = rng.uniform(0.5, 2.0, n) * 1e4 if vary_W else 1e4
        try:
            return build_cost_model(
                kernel, rng.uniform(5.0, 30.0), W,
                rng.uniform(0.0, 800.0) if sigma2 is None else sigma2,
                rng.uniform(0.0, 10.0) if delta is None else delta, n)
        except NonConvexImpactMatrix:
            continue


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet_data_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        yield
