"""Calibration of the propagator model from an interval series.

Returns are handled in basis points. The pipeline is

    impact function f  ->  lagged regression for g(k)  ->  G0 = cumsum(g)
    ->  power-law fit of G0  ->  residual variance, R^2

plus the half spread from quotes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import optimize

from .errors import DataWarning, DegenerateBins, FitDiverged, InsufficientData, SingularDesign
from .impact_model import PowerLawKernel, PropagatorKernel, TabulatedKernel, kernel_from_dict
from .market_data import (IntervalSeries, Quotes, _as_quotes, _day_slices, scheme_from_dict,
                          scheme_to_dict)

BP = 1e4
MAX_CONDITION = 1e10
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ImpactFunctionFit:
    """Odd instantaneous impact ``f`` in bp.

    ``linear``: ``f(x) = theta * x`` on normalized imbalance.
    ``arctan``: ``f(x) = theta * arctan(rho * x)`` on raw signed volume.
    """

    form: str
    theta: float
    theta_se: float
    rho: float | None = None
    rho_se: float | None = None
    bin_center: np.ndarray = field(default=None, repr=False)
    bin_mean: np.ndarray = field(default=None, repr=False)
    bin_count: np.ndarray = field(default=None, repr=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.form == "linear":
            return self.theta * x
        return self.theta * np.arctan(self.rho * x)

    def regressor(self, series: IntervalSeries) -> np.ndarray:
        return series.v_nor if self.form == "linear" else series.v

    def to_dict(self):
        return {"form": self.form, "theta_bp": self.theta, "theta_se_bp": self.theta_se,
                "rho_per_share": self.rho, "rho_se": self.rho_se}


def equal_population_bins(x, y, n_bins):
    """Sort by ``x`` and split into ``n_bins`` groups of (nearly) equal size."""
    order = np.argsort(x, kind="stable")
    groups = np.array_split(order, n_bins)
    cx = np.array([x[g].mean() for g in groups])
    cy = np.array([y[g].mean() for g in groups])
    cnt = np.array([len(g) for g in groups])
    return cx, cy, cnt


def _arctan_fit(cx, cy, w, scale):
    """Weighted least squares of ``theta * arctan(rho * x)`` through bin means."""
    sw = np.sqrt(w)

    def resid(p):
        theta, lrho = p
        return sw * (cy - theta * np.arctan(np.exp(lrho) * cx))

    best = None
    for mult in (0.03, 0.1, 0.3, 1.0, 3.0, 10.0):
        rho0 = mult / scale
        a = np.arctan(rho0 * cx)
        theta0 = (w * a * cy).sum() / max((w * a * a).sum(), 1e-300)
        try:
            res = optimize.least_squares(resid, [theta0, np.log(rho0)], method="lm",
                                         xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=20000)
        except ValueError:
            continue
        if not res.success or not np.all(np.isfinite(res.x)):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitDiverged("arctan impact fit failed from every start")
    return best


def estimate_impact_function(series: IntervalSeries, n_bins: int = 30,
                             form: str = "linear") -> ImpactFunctionFit:
    """Fit the instantaneous impact ``E[r | x]`` through equal-population bins.

    Observations are pooled with their mirror images ``(-x, -r)`` so the fit
    is odd by construction; bin means are fitted by least squares weighted
    with bin counts.
    """
    if form not in ("linear", "arctan"):
        raise ValueError("form must be 'linear' or 'arctan'")
    if len(series) == 0:
        raise InsufficientData("empty series")
    if n_bins < 3:
        raise ValueError("n_bins must be at least 3")
    x = np.asarray(series.v_nor if form == "linear" else series.v, dtype=float)
    y = np.asarray(series.r, dtype=float) * BP
    if np.ptp(x) == 0:
        raise DegenerateBins("all imbalances are equal")
    xp = np.concatenate([x, -x])
    yp = np.concatenate([y, -y])
    cx, cy, cnt = equal_population_bins(xp, yp, min(n_bins, len(xp)))

    if form == "linear":
        theta = float((cnt * cx * cy).sum() / (cnt * cx * cx).sum())
        resid = y - theta * x
        s2 = (resid @ resid) / max(len(x) - 1, 1)
        se = float(np.sqrt(s2 / (x @ x)))
        return ImpactFunctionFit("linear", theta, se, None, None, cx, cy, cnt)

    scale = np.median(np.abs(x[x != 0]))
    res = _arctan_fit(cx, cy, cnt.astype(float), scale)
    theta, rho = float(res.x[0]), float(np.exp(res.x[1]))
    resid = y - theta * np.arctan(rho * x)
    s2 = (resid @ resid) / max(len(x) - 2, 1)
    # per-bin mean variance is s2 / count; res.jac already carries sqrt(count)
    cov = s2 * np.linalg.pinv(res.jac.T @ res.jac)
    theta_se = float(np.sqrt(max(cov[0, 0], 0.0)))
    rho_se = float(rho * np.sqrt(max(cov[1, 1], 0.0)))
    return ImpactFunctionFit("arctan", theta, theta_se, rho, rho_se, cx, cy, cnt)


@dataclass(frozen=True)
class EmpiricalPropagator:
    """Regression coefficients ``g(k)`` and cumulative ``G0_tab`` (``G0_tab[0] = 0``)."""

    g: np.ndarray
    g_se: np.ndarray
    k_max: int
    history: int
    n_obs: int
    rss: float
    tss: float
    condition_number: float

    @property
    def G0_tab(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.g)])


def _design(series: IntervalSeries, impact: ImpactFunctionFit, k_max: int, history: int):
    """Lagged-regressor matrix using only rows with full in-day history."""
    f = impact(impact.regressor(series))
    y = np.asarray(series.r, dtype=float) * BP
    rows_x, rows_y = [], []
    for _, a, b in _day_slices(series.day_id):
        if b - a < history:
            continue
        win = sliding_window_view(f[a:b], history)[:, ::-1][:, :k_max]
        rows_x.append(win)
        rows_y.append(y[a + history - 1:b])
    if not rows_x:
        return np.zeros((0, k_max)), np.zeros(0)
    return np.vstack(rows_x), np.concatenate(rows_y)


def regress_propagator(series: IntervalSeries, impact: ImpactFunctionFit, k_max: int = 50,
                       history: int | None = None) -> EmpiricalPropagator:
    """OLS of ``r_j`` on ``f(x_{j-k})`` for ``k = 0 .. k_max - 1``.

    Only intervals with ``history - 1`` earlier intervals in the same day enter
    (``history`` defaults to ``k_max``); fixing ``history`` across different
    ``k_max`` keeps the sample identical so the models are nested.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    history = k_max if history is None else history
    if history < k_max:
        raise ValueError("history must be >= k_max")
    A, y = _design(series, impact, k_max, history)
    if len(y) < 10 * k_max:
        raise InsufficientData(f"{len(y)} usable intervals, need {10 * k_max}")
    sv = np.linalg.svd(A, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if cond > MAX_CONDITION:
        raise SingularDesign("collinear lagged regressors", cond)
    g, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ g
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    dof = max(len(y) - k_max, 1)
    cov_diag = np.diag(np.linalg.inv(A.T @ A)) * rss / dof
    return EmpiricalPropagator(g=g, g_se=np.sqrt(cov_diag), k_max=k_max, history=history,
                               n_obs=len(y), rss=rss, tss=tss, condition_number=cond)


def _residuals(series, impact, emp):
    A, y = _design(series, impact, emp.k_max, emp.history)
    return y, y - A @ emp.g


def r_squared(series: IntervalSeries, impact: ImpactFunctionFit,
              emp: EmpiricalPropagator) -> float:
    """Fraction of return variance explained by the lagged impact regression."""
    y, res = _residuals(series, impact, emp)
    tss = ((y - y.mean()) ** 2).sum()
    if tss == 0:
        return 1.0 if not np.any(res) else 0.0
    return float(np.clip(1.0 - (res @ res) / tss, 0.0, 1.0))


@dataclass(frozen=True)
class NoiseEstimate:
    sigma2: float  # bp^2 per interval
    n: int


def estimate_noise_variance(series: IntervalSeries, impact: ImpactFunctionFit,
                            emp: EmpiricalPropagator) -> NoiseEstimate:
    """Mean squared regression residual."""
    _, res = _residuals(series, impact, emp)
    if len(res) == 0:
        raise InsufficientData("no usable intervals")
    return NoiseEstimate(float(res @ res / len(res)), len(res))


@dataclass(frozen=True)
class KernelFit:
    gamma0: float
    l0: float
    beta: float
    residual_norm: float
    gamma0_se: float
    l0_se: float
    beta_se: float
    ok: bool = True

    @property
    def kernel(self) -> PowerLawKernel:
        return PowerLawKernel(self.gamma0, max(self.l0, 0.0), min(max(self.beta, 0.0), 1.999999))


def _power_law(p, lags):
    g, l0, b = p
    return g / (l0 * l0 + lags * lags) ** (b / 2)


def fit_kernel(emp, l0_grid=None, beta_grid=None, rel_threshold=0.05) -> KernelFit:
    """Least-squares fit of ``gamma0 / (l0^2 + l^2)^(beta/2)`` to ``G0_tab(1..K)``.

    A grid over ``(l0, beta)`` (with the optimal ``gamma0`` in closed form at
    each node) seeds bounded local refinements; the lowest residual wins, ties
    going to smaller ``l0`` then smaller ``beta``.

    ``emp`` may be an :class:`EmpiricalPropagator` or an array ``G0(0..K)``.
    """
    tab = emp.G0_tab if isinstance(emp, EmpiricalPropagator) else np.asarray(emp, float)
    K = len(tab) - 1
    if K < 4:
        raise InsufficientData("need at least 4 lags to fit the kernel")
    lags = np.arange(1, K + 1, dtype=float)
    y = tab[1:]
    if l0_grid is None:
        l0_grid = np.concatenate([[0.0], np.logspace(-1, np.log10(max(2.0 * K, 10.0)), 16)])
    if beta_grid is None:
        beta_grid = np.linspace(0.0, 1.5, 16)

    seeds = []
    for l0 in l0_grid:
        for b in beta_grid:
            basis = (l0 * l0 + lags * lags) ** (-b / 2)
            g = (basis @ y) / (basis @ basis)
            if g <= 0:
                continue
            r = y - g * basis
            seeds.append((float(r @ r), l0, b, g))
    if not seeds:
        raise FitDiverged("no positive-amplitude start on the grid")
    seeds.sort(key=lambda s: (s[0], s[1], s[2]))

    def resid(p):
        return _power_law(p, lags) - y

    results = []
    for _, l0, b, g in seeds[:8]:
        try:
            res = optimize.least_squares(
                resid, [g, l0, b], bounds=([1e-12, 0.0, 0.0], [np.inf, np.inf, 1.999]),
                method="trf", x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                max_nfev=5000)
        except ValueError:
            continue
        if np.all(np.isfinite(res.x)):
            results.append(res)
    if not results:
        raise FitDiverged("all kernel-fit starts failed")
    best = min(results, key=lambda r: (round(2 * r.cost, 14), r.x[1], r.x[2]))

    rss = float(2 * best.cost)
    dof = max(K - 3, 1)
    cov = rss / dof * np.linalg.pinv(best.jac.T @ best.jac)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    scale = float(y @ y)
    ok = scale == 0 or rss / scale <= rel_threshold ** 2
    if not ok:
        warnings.warn("kernel fit residual above threshold", DataWarning, stacklevel=2)
    g, l0, b = (float(v) for v in best.x)
    return KernelFit(g, l0, b, float(np.sqrt(rss)), float(se[0]), float(se[1]), float(se[2]), ok)


@dataclass(frozen=True)
class SpreadEstimate:
    delta: float  # bp
    n_quotes: int
    n_crossed: int = 0


def estimate_spread(quotes, session=None) -> SpreadEstimate:
    """Time-weighted mean of ``(A - B) / (A + B)`` in bp.

    Each quote is weighted by the time until the next quote of its day (or the
    session close when ``session`` is given as ``{day: (open, close)}``).
    Crossed quotes are excluded and counted.
    """
    q = _as_quotes(quotes)
    crossed = q.ask < q.bid
    n_crossed = int(crossed.sum())
    if n_crossed:
        warnings.warn(f"{n_crossed} crossed quotes excluded", DataWarning, stacklevel=2)
        keep = ~crossed
        q = Quotes(q.day_id[keep], q.timestamp[keep], q.bid[keep], q.ask[keep])
    if len(q) == 0:
        raise InsufficientData("no valid quotes")
    rel = (q.ask - q.bid) / (q.ask + q.bid)
    w = np.zeros(len(q))
    for day, a, b in _day_slices(q.day_id):
        ts = q.timestamp[a:b].astype(float)
        end = ts[-1]
        if isinstance(session, dict) and day in session:
            end = max(float(session[day][1]), end)
        w[a:b] = np.diff(np.concatenate([ts, [end]]))
    if w.sum() <= 0:
        w[:] = 1.0
    return SpreadEstimate(float(BP * (w @ rel) / w.sum()), len(q), n_crossed)


# --- calibrated model --------------------------------------------------------

@dataclass
class CalibratedModel:
    """Everything needed to build a cost model, plus fit diagnostics."""

    impact: ImpactFunctionFit
    kernel: PropagatorKernel
    sigma2: float
    delta: float
    k_max: int
    scheme: object
    W: float
    r2: float | None = None
    kernel_fit: KernelFit | None = None
    n_obs: int | None = None
    n_intervals: int | None = None  # typical intervals per day

    def linear_theta(self) -> float:
        """Impact slope per unit participation for the quadratic cost model.

        An arctan fit on raw volume is linearized at zero: ``theta * rho * W``.
        """
        if self.impact.form == "linear":
            return self.impact.theta
        return self.impact.theta * self.impact.rho * self.W

    def cost_model(self, n: int, W=None, delta=None, sigma2=None):
        from .impact_model import build_cost_model
        return build_cost_model(self.kernel, self.linear_theta(),
                                self.W if W is None else W,
                                self.sigma2 if sigma2 is None else sigma2,
                                self.delta if delta is None else delta, n)

    def to_dict(self):
        d = {
            "schema_version": SCHEMA_VERSION,
            "units": {"theta": "bp per unit normalized imbalance (linear) or bp (arctan)",
                      "rho": "1/shares", "sigma2": "bp^2 per interval", "delta": "bp",
                      "W": "shares per interval", "k_max": "intervals"},
            "impact": self.impact.to_dict(),
            "kernel": self.kernel.to_dict(),
            "sigma2_bp2": self.sigma2,
            "delta_bp": self.delta,
            "k_max": self.k_max,
            "scheme": scheme_to_dict(self.scheme) if self.scheme is not None else None,
            "W_shares": self.W,
            "r2": self.r2,
            "n_obs": self.n_obs,
            "n_intervals": self.n_intervals,
        }
        if self.kernel_fit is not None:
            kf = self.kernel_fit
            d["kernel_fit"] = {"residual_norm": kf.residual_norm, "gamma0_se": kf.gamma0_se,
                               "l0_se": kf.l0_se, "beta_se": kf.beta_se, "ok": kf.ok}
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
        imp = d["impact"]
        impact = ImpactFunctionFit(imp["form"], float(imp["theta_bp"]),
                                   float(imp.get("theta_se_bp") or 0.0),
                                   imp.get("rho_per_share"), imp.get("rho_se"))
        scheme = scheme_from_dict(d["scheme"]) if d.get("scheme") else None
        return cls(impact=impact, kernel=kernel_from_dict(d["kernel"]),
                   sigma2=float(d["sigma2_bp2"]), delta=float(d["delta_bp"]),
                   k_max=int(d["k_max"]), scheme=scheme, W=float(d["W_shares"]),
                   r2=d.get("r2"), n_obs=d.get("n_obs"), n_intervals=d.get("n_intervals"))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def calibrate(series: IntervalSeries, quotes=None, *, n_bins=30, form="linear", k_max=50,
              delta=None, fit_parametric=True):
    """Run the full calibration chain on an interval series.

    Returns ``(CalibratedModel, EmpiricalPropagator)``. The half spread comes
    from ``quotes`` unless given explicitly.
    """
    impact = estimate_impact_function(series, n_bins, form)
    emp = regress_propagator(series, impact, k_max)
    kfit = None
    if fit_parametric:
        kfit = fit_kernel(emp)
        kernel = kfit.kernel
    else:
        kernel = TabulatedKernel(emp.G0_tab[1:])
    noise = estimate_noise_variance(series, impact, emp)
    if delta is None:
        delta = estimate_spread(quotes).delta if quotes is not None else 0.0
    W = float(np.mean(series.W))
    model = CalibratedModel(impact=impact, kernel=kernel, sigma2=noise.sigma2, delta=delta,
                            k_max=k_max, scheme=series.scheme, W=W,
                            r2=r_squared(series, impact, emp), kernel_fit=kfit,
                            n_obs=emp.n_obs, n_intervals=typical_day_length(series))
    return model, emp


def typical_day_length(series: IntervalSeries) -> int:
    """Median number of intervals per day."""
    counts = [b - a for _, a, b in series.day_bounds()]
    return int(np.median(counts)) if counts else 0
