"""Optimal execution schedules under the propagator cost model.

The problem solved is

    min_v  v' (I + lam V) v + delta * sum|v|    subject to  sum(v) = X

Without spread it has a closed form through the symmetric part of ``I``.
With spread the absolute value is removed by splitting ``v = a - b`` with
``a, b >= 0``; an augmented Lagrangian loop enforces the volume constraint
around L-BFGS-B on the bound-constrained subproblem, and the result is
finished by an active-set pass on the KKT conditions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import json
import logging
import os
import warnings

import numpy as np
from scipy import linalg, optimize

from .errors import MaxIterationsExceeded, NonConvex, SingularSystem
from .impact_model import CostModel, Schedule, expected_cost, objective, to_participation

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = np.concatenate([[0.0], np.logspace(-8, -2, 20)])


@dataclass
class OptimizationConfig:
    """Solver settings.

    ``tol`` is the relative objective change between outer iterations and
    also the stationarity threshold (in normalized units) for success.
    """

    lam: float = 0.0
    X: float = 1.0
    tol: float = 1e-9
    max_iter: int = 60
    seed: int = 0
    n_starts: int = 1
    polish: bool = True
    method: str = "split"  # or "smooth" (diagnostic only)
    # schedule from a nearby problem; its sign pattern seeds an exact KKT solve
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.method not in ("split", "smooth"):
            raise ValueError("method must be 'split' or 'smooth'")


@dataclass
class SolveDiagnostics:
    iterations: int
    stationarity: float
    objective: float
    path: str
    converged: bool = True
    polished: bool = False
    pre_polish_stationarity: float = float("nan")
    flags: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FrontierPoint:
    lam: float
    expected_cost: float  # per share, bp (impact + spread)
    variance: float  # per share^2, bp^2
    schedule: Schedule | None
    impact_cost: float = float("nan")
    spread_cost: float = float("nan")
    diagnostics: SolveDiagnostics | None = None
    error: str | None = None


def _quadratic(model: CostModel, lam: float) -> np.ndarray:
    return model.sym_impact + lam * model.variance_matrix


def _ridge_solve(F: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = len(rhs)
    try:
        cf = linalg.cho_factor(F, lower=True)
        d = np.diag(cf[0]) ** 2
        if d.min() > 1e-14 * d.max():
            return linalg.cho_solve(cf, rhs)
    except linalg.LinAlgError:
        pass
    eig = np.linalg.eigvalsh(F)
    if eig[0] < -1e-10 * abs(eig[-1]):
        raise NonConvex(f"quadratic form is indefinite (min eigenvalue {eig[0]:.3g})")
    ridge = 1e-12 * np.trace(F) / n
    try:
        return linalg.solve(F + ridge * np.eye(n), rhs, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def solve_closed_form(model: CostModel, X: float, lam: float = 0.0) -> Schedule:
    """Minimizer of ``v'(I + lam V)v`` with ``sum(v) = X``, ignoring spread.

    Uses the symmetric part ``F = (I + I')/2 + lam V``, so
    ``v = X F^-1 1 / (1' F^-1 1)``.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if X == 0:
        return Schedule(np.zeros(model.n))
    w = _ridge_solve(_quadratic(model, lam), np.ones(model.n))
    denom = w.sum()
    if not np.isfinite(denom) or denom <= 0:
        raise SingularSystem("1' F^-1 1 is not positive")
    return Schedule(X * w / denom)


# --- numerical solver -------------------------------------------------------

def _kkt_residual(Fn, dn, u):
    """Max violation of the KKT conditions of the normalized problem.

    Written with the shifted multiplier ``z' = z + dn``: buys need
    ``2 Fn u + z' = 0``, sells ``2 Fn u + z' = 2 dn`` and idle intervals
    ``0 <= 2 Fn u + z' <= 2 dn``. This avoids cancelling terms of size ``dn``.
    """
    if len(u) == 0:
        return 0.0
    h = 2.0 * Fn @ u
    pos, neg = u > 0, u < 0
    if pos.any():
        z = -np.mean(h[pos])
    elif neg.any():
        z = 2.0 * dn - np.mean(h[neg])
    else:
        z = -np.min(h)
    h = h + z
    res = np.where(pos, np.abs(h), np.where(neg, np.abs(h - 2.0 * dn),
                                            np.maximum(0.0, np.maximum(-h, h - 2.0 * dn))))
    return float(np.max(res))


def _active_set_polish(Fn, dn, u0, max_rounds=None):
    """Refine a near-optimal point by solving the KKT system on its sign pattern.

    Uses the shifted multiplier of :func:`_kkt_residual`. Returns the
    polished point or None if the pattern iteration fails.
    """
    n = len(u0)
    scale = np.max(np.abs(u0))
    signs = np.where(np.abs(u0) > 1e-7 * scale, np.sign(u0), 0.0)
    if dn == 0:
        signs[:] = 1.0  # no kink: every coordinate is free
    if not signs.any():
        signs[np.argmax(np.abs(u0))] = 1.0
    max_rounds = max_rounds or 4 * n + 10
    seen = set()
    for _ in range(max_rounds):
        key = signs.tobytes()
        if key in seen:
            return None
        seen.add(key)
        S = np.flatnonzero(signs)
        m = len(S)
        K = np.zeros((m + 1, m + 1))
        K[:m, :m] = 2.0 * Fn[np.ix_(S, S)]
        K[:m, m] = 1.0
        K[m, :m] = 1.0
        rhs = np.concatenate([dn * (1.0 - signs[S]), [1.0]])
        try:
            sol = linalg.solve(K, rhs, assume_a="sym")
        except linalg.LinAlgError:
            return None
        uS, z = sol[:m], sol[m]
        if dn > 0:
            wrong = np.flatnonzero(uS * signs[S] < 0)
            if len(wrong):
                # drop the worst offender from the support
                j = S[wrong[np.argmax(np.abs(uS[wrong]))]]
                signs[j] = 0.0
                continue
        u = np.zeros(n)
        u[S] = uS
        h = 2.0 * Fn @ u + z
        out = np.flatnonzero(signs == 0)
        if len(out):
            low, high = -h[out], h[out] - 2.0 * dn
            viol = np.maximum(low, high)
            if viol.max() > 1e-12 * max(1.0, dn):
                k = np.argmax(viol)
                signs[out[k]] = 1.0 if low[k] >= high[k] else -1.0
                continue
        return u
    return None


def _al_split(Fn, dn, u0, tol, max_iter):
    """Augmented Lagrangian over ``u = a - b``, ``a, b >= 0``.

    On ``sum(u) = 1`` the spread term ``dn * sum(a + b)`` equals
    ``dn + 2 dn * sum(b)``, so only the counter-trades ``b`` are penalized.
    This keeps the multiplier of order ``|Fn|`` even when ``dn`` is huge
    (tiny orders), where penalizing ``a`` too would pull ``u`` towards zero.
    """
    n = len(u0)
    ones = np.ones(n)
    x = np.concatenate([np.maximum(u0, 0), np.maximum(-u0, 0)])
    mu, rho = 0.0, 10.0
    bounds = [(0.0, None)] * (2 * n)
    prev_obj, prev_c = np.inf, np.inf
    it = 0
    for it in range(1, max_iter + 1):
        def fun(x, mu=mu, rho=rho):
            a, b = x[:n], x[n:]
            u = a - b
            Fu = Fn @ u
            c = u.sum() - 1.0
            f = u @ Fu + 2.0 * dn * b.sum() + mu * c + 0.5 * rho * c * c
            gu = 2.0 * Fu + (mu + rho * c) * ones
            return f, np.concatenate([gu, -gu + 2.0 * dn])

        res = optimize.minimize(fun, x, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 5000, "ftol": 1e-16, "gtol": 1e-13,
                                         "maxcor": 30})
        x = res.x
        u = x[:n] - x[n:]
        c = u.sum() - 1.0
        obj = u @ Fn @ u + dn * np.abs(u).sum()
        mu += rho * c
        if abs(c) > 0.25 * prev_c:
            rho = min(rho * 10.0, 1e12)
        if abs(c) < 1e-10 and abs(prev_obj - obj) <= tol * max(abs(obj), 1e-300):
            return u, it, True
        prev_obj, prev_c = obj, abs(c)
    return u, it, False


def _al_smooth(Fn, dn, u0, tol, max_iter, eps=1e-12):
    n = len(u0)
    u = u0.copy()
    mu, rho = 0.0, 10.0
    prev_obj, prev_c = np.inf, np.inf
    it = 0
    for it in range(1, max_iter + 1):
        def fun(u, mu=mu, rho=rho):
            Fu = Fn @ u
            c = u.sum() - 1.0
            sq = np.sqrt(u * u + eps)
            # smoothed 2 * negative part; equals |u| - u up to eps
            f = u @ Fu + dn * (sq - u).sum() + mu * c + 0.5 * rho * c * c
            return f, 2.0 * Fu + dn * (u / sq - 1.0) + (mu + rho * c)

        u = optimize.minimize(fun, u, jac=True, method="L-BFGS-B",
                              options={"maxiter": 5000, "ftol": 1e-16, "gtol": 1e-13}).x
        c = u.sum() - 1.0
        obj = u @ Fn @ u + dn * np.abs(u).sum()
        mu += rho * c
        if abs(c) > 0.25 * prev_c:
            rho = min(rho * 10.0, 1e12)
        if abs(c) < 1e-10 and abs(prev_obj - obj) <= tol * max(abs(obj), 1e-300):
            return u, it, True
        prev_obj, prev_c = obj, abs(c)
    return u, it, False


def solve_with_spread(model: CostModel, config: OptimizationConfig):
    """Minimize expected cost plus risk and spread terms numerically.

    Returns:
        ``(Schedule, SolveDiagnostics)``. On hitting ``max_iter`` the best
        iterate is returned with ``converged=False`` and a warning.
    """
    X, lam = float(config.X), float(config.lam)
    n = model.n
    if X == 0:
        return Schedule(np.zeros(n)), SolveDiagnostics(0, 0.0, 0.0, "trivial")
    if n == 1:
        v = np.array([X])
        return Schedule(v), SolveDiagnostics(0, 0.0, objective(model, v, lam), "trivial")

    F = _quadratic(model, lam)
    scale = np.trace(F) / n
    Fn = F / scale
    dn = model.delta / (abs(X) * scale)

    if config.warm_start is not None and config.method == "split":
        w = np.asarray(config.warm_start, dtype=float)
        if w.shape == (n,) and w.sum() != 0:
            up = _active_set_polish(Fn, dn, w / w.sum())
            if up is not None:
                r = _kkt_residual(Fn, dn, up)
                if r <= min(config.tol, 1e-10):
                    v = X * up / up.sum()
                    return Schedule(v), SolveDiagnostics(
                        0, r, objective(model, v, lam), "warm+active-set", polished=True,
                        pre_polish_stationarity=r)

    rng = np.random.default_rng(config.seed)
    starts = [np.full(n, 1.0 / n)]
    for _ in range(config.n_starts - 1):
        starts.append(rng.dirichlet(np.ones(n)))

    best = None
    for u0 in starts:
        if config.method == "smooth":
            u, it, ok = _al_smooth(Fn, dn, u0, config.tol, config.max_iter)
        else:
            u, it, ok = _al_split(Fn, dn, u0, config.tol, config.max_iter)
        q = u @ Fn @ u + dn * np.abs(u).sum()
        if best is None or q < best[1]:
            best = (u, q, it, ok)
    u, _, iters, ok = best

    pre = _kkt_residual(Fn, dn, u / u.sum())
    diag = SolveDiagnostics(iterations=iters, stationarity=pre, objective=float("nan"),
                            path="numerical", converged=ok, pre_polish_stationarity=pre)
    if config.polish and config.method == "split":
        up = _active_set_polish(Fn, dn, u)
        if up is not None:
            qp = up @ Fn @ up + dn * np.abs(up).sum()
            qu = u @ Fn @ u + dn * np.abs(u).sum()
            # an exact KKT point is the global optimum; objective gaps are roundoff
            if qp <= qu + 1e-9 * abs(qu) or _kkt_residual(Fn, dn, up) < _kkt_residual(Fn, dn, u):
                u = up
                diag.polished = True
                diag.path = "numerical+active-set"
            else:
                diag.flags.append("polish_rejected")
        else:
            diag.flags.append("polish_failed")

    u = u / u.sum()
    v = X * u
    diag.stationarity = _kkt_residual(Fn, dn, u)
    diag.objective = objective(model, v, lam)
    if diag.stationarity > max(config.tol, 1e-7):
        diag.flags.append("stationarity_above_tol")
        diag.converged = False
    if not diag.converged:
        warnings.warn(f"solver did not converge (stationarity {diag.stationarity:.3g})",
                      MaxIterationsExceeded, stacklevel=2)
    return Schedule(v), diag


# --- baselines --------------------------------------------------------------

def bertsimas_lo_flat(X: float, N: int) -> Schedule:
    """Constant-rate schedule ``X / N`` per interval."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return Schedule(np.full(N, X / N))


def almgren_chriss_schedule(X: float, N: int, T: float, lam: float, sigma2: float,
                            rho_ac: float) -> Schedule:
    """Risk-averse schedule ``v_k ~ cosh(beta (T - t_k))`` with ``t_k = k T / N``.

    ``beta = sqrt(lam * sigma2 / rho_ac)``; ``lam = 0`` gives the flat schedule.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if not rho_ac > 0 or lam < 0 or sigma2 < 0 or not T > 0:
        raise ValueError("need rho_ac > 0, T > 0, lam >= 0, sigma2 >= 0")
    beta = np.sqrt(lam * sigma2 / rho_ac)
    t = np.arange(N) * T / N
    arg = beta * (T - t)
    logw = np.logaddexp(arg, -arg)
    w = np.exp(logw - logw.max())
    return Schedule(X * w / w.sum())


def default_rho_ac(model: CostModel) -> float:
    """AC temporary impact matched to the propagator's same-interval cost."""
    return model.theta * model.effective[0] / float(np.mean(model.W))


# --- frontiers --------------------------------------------------------------

def _point(model, X, lam, sched, diag=None):
    rep = expected_cost(model, sched, lam)
    ax = abs(X)
    return FrontierPoint(lam=float(lam), expected_cost=rep.expected_cost / ax,
                         variance=rep.variance / ax**2, schedule=sched,
                         impact_cost=rep.frac_impact, spread_cost=rep.frac_spread,
                         diagnostics=diag)


def efficient_frontier(model: CostModel, X: float, lambdas=DEFAULT_LAMBDAS,
                       config: OptimizationConfig | None = None):
    """One optimal point per risk aversion, sorted by ``lam``.

    A failing ``lam`` yields a point with ``error`` set instead of aborting.
    """
    lambdas = sorted(float(x) for x in lambdas)
    if not lambdas:
        raise ValueError("empty lambda list")
    if lambdas[0] < 0:
        raise ValueError("lambdas must be non-negative")
    if X == 0:
        raise ValueError("frontier needs X != 0")
    base = config or OptimizationConfig()

    def one(lam):
        cfg = OptimizationConfig(lam=lam, X=X, tol=base.tol, max_iter=base.max_iter,
                                 seed=base.seed, n_starts=base.n_starts, polish=base.polish,
                                 method=base.method)
        try:
            sched, diag = solve_with_spread(model, cfg)
            return _point(model, X, lam, sched, diag)
        except Exception as exc:  # recorded per point, run continues
            log.warning("frontier point lam=%g failed: %s", lam, exc)
            return FrontierPoint(lam, float("nan"), float("nan"), None,
                                 error=f"{type(exc).__name__}: {exc}")

    # non-convergence is reported per point through its diagnostics
    workers = min(n_threads(), len(lambdas))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxIterationsExceeded)
        if workers <= 1:
            return [one(lam) for lam in lambdas]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, lambdas))


def n_threads() -> int:
    """Worker cap from ``TRANSIENT_EXEC_THREADS`` (default: up to 4 CPUs)."""
    env = os.environ.get("TRANSIENT_EXEC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer TRANSIENT_EXEC_THREADS=%r", env)
    return min(4, os.cpu_count() or 1)


def almgren_chriss_frontier(model: CostModel, X: float, lambdas=DEFAULT_LAMBDAS,
                            rho_ac: float | None = None):
    """AC schedules for each ``lam``, costed under the propagator model."""
    rho = default_rho_ac(model) if rho_ac is None else rho_ac
    pts = []
    for lam in sorted(float(x) for x in lambdas):
        sched = almgren_chriss_schedule(X, model.n, model.n, lam, model.sigma2, rho)
        pts.append(_point(model, X, lam, sched))
    return pts


def characteristic_lambda(model: CostModel, X: float) -> float:
    """Risk aversion at which the flat schedule's impact and risk terms balance."""
    flat = bertsimas_lo_flat(X, model.n)
    rep = expected_cost(model, flat)
    if rep.variance == 0:
        return 1.0
    return rep.expected_impact_cost / rep.variance


def match_variance(model: CostModel, X: float, target: float,
                   config: OptimizationConfig | None = None, max_decades: int = 12):
    """Optimal frontier point whose per-share^2 variance equals ``target``.

    The optimal variance decreases with ``lam``, so ``log(lam)`` is found by a
    bracketing root search. Returns None when ``target`` exceeds the
    variance at ``lam = 0`` or lies below what ``max_decades`` of risk
    aversion above the characteristic value can reach.
    """
    base = config or OptimizationConfig()
    cache = {}

    def solve(lam):
        if lam not in cache:
            near = min(cache, key=lambda k: abs(np.log(k + 1e-300) - np.log(lam + 1e-300)), default=None)
            cfg = OptimizationConfig(lam=lam, X=X, tol=base.tol, max_iter=base.max_iter,
                                     warm_start=None if near is None else cache[near].schedule.v)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MaxIterationsExceeded)
                s, d = solve_with_spread(model, cfg)
            cache[lam] = _point(model, X, lam, s, d)
        return cache[lam]

    p0 = solve(0.0)
    if np.isclose(target, p0.variance, rtol=1e-12):
        return p0
    if target > p0.variance:
        return None
    lam_c = characteristic_lambda(model, X)
    lo, hi = lam_c * 1e-10, lam_c
    if solve(lo).variance <= target:
        return solve(lo)
    while solve(hi).variance > target:
        hi *= 10.0
        if hi > lam_c * 10.0**max_decades:
            return None
    t = optimize.brentq(lambda t: solve(np.exp(t)).variance / target - 1.0,
                        np.log(lo), np.log(hi), xtol=1e-12, rtol=1e-14)
    return solve(float(np.exp(t)))


def compare_strategies(model: CostModel, X: float, config: OptimizationConfig | None = None):
    """Flat, spread-aware optimal and spread-free optimal schedules at ``lam = 0``."""
    cfg = config or OptimizationConfig()
    flat = bertsimas_lo_flat(X, model.n)
    u_shaped, _ = solve_with_spread(
        model, OptimizationConfig(lam=0.0, X=X, tol=cfg.tol, max_iter=cfg.max_iter))
    osc = solve_closed_form(model, X, 0.0)
    return {
        "flat": (flat, expected_cost(model, flat)),
        "u_shaped": (u_shaped, expected_cost(model, u_shaped)),
        "oscillating": (osc, expected_cost(model, osc)),
    }


# --- export -----------------------------------------------------------------

def write_schedule_csv(schedule, W, path) -> None:
    """Columns ``interval,v,x`` (shares, participation rate)."""
    v = schedule.v if isinstance(schedule, Schedule) else np.asarray(schedule, float)
    x = to_participation(v, W)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "v", "x"])
        for k, (vk, xk) in enumerate(zip(v, x)):
            w.writerow([k, repr(float(vk)), repr(float(xk))])


def read_schedule_csv(path) -> Schedule:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "v" not in rows[0]:
        raise ValueError(f"{path}: expected a schedule CSV with a 'v' column")
    return Schedule(np.array([float(r["v"]) for r in rows]))


def write_frontier_csv(points, path, baseline=None) -> None:
    """Plot-ready ``variance,expected_cost`` rows (per share; bp^2, bp).

    With ``baseline`` a ``curve`` column separates the two frontiers.
    Failed points are omitted here and kept in the JSON export.
    """
    curves = [("propagator", points)] + ([("almgren_chriss", baseline)] if baseline else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variance", "expected_cost", "curve", "lam"])
        for name, pts in curves:
            for p in pts:
                if p.error is None:
                    w.writerow([repr(p.variance), repr(p.expected_cost), name, repr(p.lam)])


def frontier_to_dict(points, baseline=None) -> dict:
    def enc(p):
        d = {"lam": p.lam, "expected_cost": p.expected_cost, "variance": p.variance,
             "impact_cost": p.impact_cost, "spread_cost": p.spread_cost, "error": p.error}
        d = {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
             for k, v in d.items()}
        d["diagnostics"] = p.diagnostics.to_dict() if p.diagnostics else None
        return d

    out = {"schema_version": 1, "units": {"expected_cost": "bp", "variance": "bp^2"},
           "propagator": [enc(p) for p in points]}
    if baseline is not None:
        out["almgren_chriss"] = [enc(p) for p in baseline]
    return out


def write_frontier_json(points, path, baseline=None) -> None:
    with open(path, "w") as fh:
        json.dump(frontier_to_dict(points, baseline), fh, indent=2)
