"""Propagator kernels and the quadratic execution-cost model.

Units used throughout: returns and costs per share in basis points (bp),
volumes in shares, time in intervals. With a linear impact function the
expected cost of a schedule ``v`` is ``v' I v + delta * sum|v|`` (bp * shares)
and its variance ``v' V v`` (bp^2 * shares^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np
from scipy import linalg

from .errors import InfeasibleParticipation, NonConvexImpactMatrix

PD_PIVOT_RATIO = 1e-12


class PropagatorKernel:
    """Decaying impact kernel ``G0(k)``; ``G0(0) = 0`` by causality."""

    def __call__(self, lags) -> np.ndarray:
        lags = np.asarray(lags, dtype=float)
        pos = lags > 0
        return np.where(pos, self._positive(np.where(pos, lags, 1.0)), 0.0)

    def _positive(self, lags: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def table(self, k_max: int) -> np.ndarray:
        """Return ``G0(0 .. k_max)`` (length ``k_max + 1``)."""
        return self(np.arange(k_max + 1))

    def to_dict(self) -> dict:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLawKernel(PropagatorKernel):
    """``G0(l) = gamma0 / (l0**2 + l**2) ** (beta / 2)`` for ``l >= 1``."""

    gamma0: float
    l0: float
    beta: float

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if self.l0 < 0:
            raise ValueError("l0 must be non-negative")
        if not 0 <= self.beta < 2:
            raise ValueError("beta must lie in [0, 2)")

    def _positive(self, lags):
        return self.gamma0 / (self.l0**2 + lags**2) ** (self.beta / 2)

    def to_dict(self):
        return {"type": "power_law", "gamma0": self.gamma0, "l0": self.l0, "beta": self.beta}


@dataclass(frozen=True)
class TabulatedKernel(PropagatorKernel):
    """Kernel given by its values ``G0(1), ..., G0(K)``.

    Lags past the table hold the last value.
    """

    values: tuple

    def __init__(self, values):
        vals = tuple(float(x) for x in np.ravel(values))
        if not vals:
            raise ValueError("tabulated kernel needs at least one value")
        object.__setattr__(self, "values", vals)

    def _positive(self, lags):
        arr = np.asarray(self.values)
        idx = np.clip(lags.astype(int) - 1, 0, len(arr) - 1)
        return arr[idx]

    def to_dict(self):
        return {"type": "tabulated", "values": list(self.values), "extension": "hold_last"}


def kernel_from_dict(d: dict) -> PropagatorKernel:
    kind = d.get("type")
    if kind == "power_law":
        return PowerLawKernel(float(d["gamma0"]), float(d["l0"]), float(d["beta"]))
    if kind == "tabulated":
        return TabulatedKernel(d["values"])
    raise ValueError(f"unknown kernel type {kind!r}")


def effective_propagator(kernel: PropagatorKernel, n: int) -> np.ndarray:
    """Effective propagator for trades priced at the interval-average mid.

    ``Gt(0) = G0(1) / 2`` and ``Gt(k) = (G0(k) + G0(k + 1)) / 2`` for ``k >= 1``,
    which is the single formula ``(G0(k) + G0(k + 1)) / 2`` given ``G0(0) = 0``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    g0 = kernel.table(n)
    return 0.5 * (g0[:-1] + g0[1:])


@dataclass(frozen=True)
class Schedule:
    """Signed volume per interval; positive entries buy."""

    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).ravel())

    @property
    def total(self) -> float:
        return float(self.v.sum())

    def __len__(self):
        return len(self.v)

    def participation(self, W) -> np.ndarray:
        return to_participation(self, W)


def _as_vector(schedule) -> np.ndarray:
    if isinstance(schedule, Schedule):
        return schedule.v
    return np.asarray(schedule, dtype=float).ravel()


@dataclass(frozen=True)
class CostModel:
    """Impact matrix, variance matrix and spread for an ``n``-interval day."""

    n: int
    theta: float
    kernel: PropagatorKernel
    W: np.ndarray
    sigma2: float
    delta: float
    theta_k: np.ndarray
    effective: np.ndarray
    impact_matrix: np.ndarray
    variance_matrix: np.ndarray
    sym_impact: np.ndarray = field(repr=False)
    pivot_ratio: float = field(default=float("nan"))

    def summary(self) -> dict:
        eig = np.linalg.eigvalsh(self.sym_impact)
        return {
            "schema_version": 1,
            "N": self.n,
            "theta_bp": self.theta,
            "kernel": self.kernel.to_dict(),
            "delta_bp": self.delta,
            "sigma2_bp2": self.sigma2,
            "W_mean_shares": float(np.mean(self.W)),
            "diagnostics": {
                "min_eigenvalue": float(eig[0]),
                "max_eigenvalue": float(eig[-1]),
                "condition_number": float(eig[-1] / eig[0]),
                "min_pivot_ratio": self.pivot_ratio,
            },
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)

    def export_matrices(self, impact_path, variance_path) -> None:
        np.savetxt(impact_path, self.impact_matrix, delimiter=",")
        np.savetxt(variance_path, self.variance_matrix, delimiter=",")


def pivot_ratio(matrix: np.ndarray) -> float:
    """Smallest over largest Cholesky pivot; ``-inf`` if factorization fails."""
    try:
        c = linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    d = np.diag(c) ** 2
    return float(d.min() / d.max())


def variance_matrix(n: int, sigma2: float) -> np.ndarray:
    idx = np.arange(n)
    return sigma2 * np.minimum.outer(idx, idx).astype(float)


def build_cost_model(kernel: PropagatorKernel, theta: float, W, sigma2: float,
                     delta: float, n: int) -> CostModel:
    """Assemble the cost model for an ``n``-interval execution.

    Args:
        kernel: propagator ``G0``.
        theta: linear impact coefficient (bp per unit normalized imbalance).
        W: market volume per interval (scalar or length-``n`` series, shares).
        sigma2: return noise variance per interval (bp^2).
        delta: half fractional spread (bp).
        n: number of intervals.

    Raises:
        NonConvexImpactMatrix: symmetrized impact matrix not positive definite.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    W = np.broadcast_to(np.asarray(W, dtype=float), (n,)).copy()
    if np.any(W <= 0):
        raise ValueError("W must be positive")
    if theta < 0 or sigma2 < 0 or delta < 0:
        raise ValueError("theta, sigma2 and delta must be non-negative")

    theta_k = theta / W
    gt = effective_propagator(kernel, n)
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    # entry (i, j): price effect at interval i of the trade made in interval j
    impact = np.where(lag >= 0, gt[np.clip(lag, 0, None)], 0.0) * theta_k[None, :]
    sym = 0.5 * (impact + impact.T)

    ratio = pivot_ratio(sym) if theta > 0 else -np.inf
    if not ratio > PD_PIVOT_RATIO:
        raise NonConvexImpactMatrix(
            f"symmetrized impact matrix is not positive definite (pivot ratio {ratio:.3g})")

    return CostModel(
        n=n, theta=float(theta), kernel=kernel, W=W, sigma2=float(sigma2),
        delta=float(delta), theta_k=theta_k, effective=gt, impact_matrix=impact,
        variance_matrix=variance_matrix(n, sigma2), sym_impact=sym, pivot_ratio=ratio,
    )


@dataclass(frozen=True)
class CostReport:
    expected_impact_cost: float
    expected_spread_cost: float
    variance: float
    frac_impact: float
    frac_spread: float
    lam: float
    objective: float

    @property
    def expected_cost(self) -> float:
        return self.expected_impact_cost + self.expected_spread_cost

    def to_dict(self) -> dict:
        d = {k: (None if isinstance(v, float) and np.isnan(v) else v)
             for k, v in self.__dict__.items()}
        d["expected_cost"] = self.expected_cost
        return d


def _check_dims(model: CostModel, v: np.ndarray):
    if v.shape != (model.n,):
        raise ValueError(f"schedule length {v.shape[0]} does not match model N={model.n}")


def impact_cost(model: CostModel, schedule) -> float:
    v = _as_vector(schedule)
    _check_dims(model, v)
    return float(v @ model.impact_matrix @ v)


def spread_cost(model: CostModel, schedule) -> float:
    v = _as_vector(schedule)
    _check_dims(model, v)
    return float(model.delta * np.abs(v).sum())


def cost_variance(model: CostModel, schedule) -> float:
    v = _as_vector(schedule)
    _check_dims(model, v)
    return float(v @ model.variance_matrix @ v)


def objective(model: CostModel, schedule, lam: float = 0.0) -> float:
    """Mean-variance objective ``E[c] + lam * Var[c]``."""
    if lam < 0:
        raise ValueError("risk aversion must be non-negative")
    return impact_cost(model, schedule) + lam * cost_variance(model, schedule) \
        + spread_cost(model, schedule)


def expected_cost(model: CostModel, schedule, lam: float = 0.0) -> CostReport:
    """Full cost breakdown; per-share figures are NaN when ``sum(v) == 0``."""
    if lam < 0:
        raise ValueError("risk aversion must be non-negative")
    v = _as_vector(schedule)
    imp = impact_cost(model, v)
    spr = spread_cost(model, v)
    var = cost_variance(model, v)
    total = abs(v.sum())
    if total > 0:
        fi, fs = imp / total, spr / total
    else:
        fi = fs = float("nan")
    return CostReport(imp, spr, var, fi, fs, float(lam), imp + lam * var + spr)


def to_participation(schedule, W) -> np.ndarray:
    """Participation rates ``v_k / W_k``."""
    v = _as_vector(schedule)
    W = np.broadcast_to(np.asarray(W, dtype=float), v.shape)
    bad = (W == 0) & (v != 0)
    if np.any(bad):
        raise InfeasibleParticipation(
            f"nonzero volume in zero-volume intervals {np.flatnonzero(bad).tolist()}")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(W == 0, 0.0, v / np.where(W == 0, 1.0, W))
