"""Synthetic markets obeying the propagator model, and Monte Carlo costing.

Two generators are provided. :func:`simulate_market` produces an interval
series directly (returns built from the lagged impact sum plus noise).
:func:`simulate_tape` produces a trade-by-trade tape with quotes, so the
whole ingestion pipeline (sign inference, aggregation) can be exercised;
:func:`series_to_tape` embeds an interval series into such a tape.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
import json

import numpy as np

from .impact_model import CostModel, PowerLawKernel, PropagatorKernel, _as_vector, \
    effective_propagator, expected_cost, kernel_from_dict
from .market_data import (US_PER_DAY, US_PER_SECOND, IntervalSeries, Quotes, RealTime,
                          Trades)

BP = 1e4
EPOCH_BASE_US = 1_246_406_400 * US_PER_SECOND  # 2009-07-01 00:00 UTC
CHUNK = 10_000


def _signs(rng, n, phi):
    """+-1 sequence; with ``phi > 0`` a two-state Markov chain with autocorrelation phi^k."""
    if phi == 0:
        return rng.choice([-1.0, 1.0], size=n)
    first = rng.choice([-1.0, 1.0])
    flip = rng.random(n - 1) < (1.0 - phi) / 2.0
    steps = np.where(flip, -1.0, 1.0)
    return first * np.concatenate([[1.0], np.cumprod(steps)])


def _noise(rng, size, sigma, dist, nu):
    if sigma == 0:
        return np.zeros(size)
    if dist == "gaussian":
        return sigma * rng.standard_normal(size)
    return sigma * np.sqrt((nu - 2.0) / nu) * rng.standard_t(nu, size)


def _kernel_increments(kernel, n):
    """``g(k) = G0(k + 1) - G0(k)`` for ``k = 0 .. n - 1``."""
    return np.diff(kernel.table(n))


@dataclass(frozen=True)
class MarketSpec:
    """Interval-level synthetic market.

    ``theta`` in bp, ``sigma`` in bp per interval, ``W`` shares per interval.
    Signs are IID (``phi = 0``) or persistent with autocorrelation ``phi^k``.
    """

    theta: float
    kernel: PropagatorKernel
    sigma: float
    W: float = 10_000.0
    phi: float = 0.0
    intervals_per_day: int = 102
    n_days: int = 10
    seed: int = 0
    magnitude: str = "uniform"  # or "power_law"
    magnitude_alpha: float = 2.0
    noise: str = "gaussian"  # or "student_t"
    nu: float = 6.0
    p0: float = float(np.log(100.0))

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not self.W > 0:
            raise ValueError("W must be positive")
        if not 0 <= self.phi < 1:
            raise ValueError("phi must lie in [0, 1)")
        if self.noise == "student_t" and not self.nu > 4:
            raise ValueError("student-t noise needs nu > 4")
        if self.magnitude not in ("uniform", "power_law"):
            raise ValueError("magnitude must be 'uniform' or 'power_law'")

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["kernel"] = kernel_from_dict(d["kernel"])
        return cls(**d)


def _magnitudes(rng, n, spec):
    u = rng.random(n)
    if spec.magnitude == "uniform":
        return u
    # power law density ~ x^(-alpha) truncated to [0.01, 1]
    a = spec.magnitude_alpha
    lo = 0.01
    if a == 1:
        return lo ** (1 - u)
    return (lo ** (1 - a) + u * (1 - lo ** (1 - a))) ** (1 / (1 - a))


def simulate_market(spec: MarketSpec) -> IntervalSeries:
    """Interval series with ``r_j = sum_k g(k) f(v_{j-k}) + eta_j`` within each day.

    Each day starts fresh (no impact carried overnight). Day ``d`` draws from
    its own generator derived from ``(seed, d)``.
    """
    n = spec.intervals_per_day
    g = _kernel_increments(spec.kernel, n)
    day_seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_days)
    cols = {k: [] for k in ("day", "p", "r", "vn")}
    for d, ss in enumerate(day_seeds):
        rng = np.random.default_rng(ss)
        v_nor = _signs(rng, n, spec.phi) * _magnitudes(rng, n, spec)
        eta = _noise(rng, n, spec.sigma, spec.noise, spec.nu)
        r_bp = np.convolve(spec.theta * v_nor, g)[:n] + eta
        r = r_bp / BP
        p = spec.p0 + np.concatenate([[0.0], np.cumsum(r)[:-1]])
        cols["day"].append(np.full(n, d, np.int64))
        cols["p"].append(p)
        cols["r"].append(r)
        cols["vn"].append(v_nor)
    v_nor = np.concatenate(cols["vn"])
    total = len(v_nor)
    return IntervalSeries(
        day_id=np.concatenate(cols["day"]),
        interval_index=np.tile(np.arange(n, dtype=np.int64), spec.n_days),
        p_open=np.concatenate(cols["p"]), r=np.concatenate(cols["r"]),
        v=v_nor * spec.W, v_nor=v_nor, W=np.full(total, spec.W),
        scheme=RealTime(300.0),
    )


# --- trade-level tape ---------------------------------------------------------

@dataclass(frozen=True)
class TapeSpec:
    """Trade-by-trade synthetic market.

    Each trade moves the log mid by ``f = theta * arctan(rho * signed_size)``
    (``rho = None``: ``theta * sign``) propagated with ``kernel``; ``sigma`` is
    the per-trade noise in bp. Quotes straddle the mid by ``delta`` bp.
    """

    theta: float
    kernel: PropagatorKernel
    sigma: float
    trades_per_day: int = 1000
    n_days: int = 5
    phi: float = 0.0
    rho: float | None = None
    mean_size: float = 500.0
    delta: float = 5.0
    session: tuple = (8 * 3600 * US_PER_SECOND, int(16.5 * 3600 * US_PER_SECOND))
    price0: float = 100.0
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        d["session"] = list(self.session)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["kernel"] = kernel_from_dict(d["kernel"])
        if "session" in d:
            d["session"] = tuple(int(x) for x in d["session"])
        return cls(**d)


def _quote_cols(day, ts, log_mid, delta):
    mid = np.exp(log_mid)
    h = delta / BP
    return day, ts, mid * (1 - h), mid * (1 + h)


def simulate_tape(spec: TapeSpec):
    """Return ``(Trades, Quotes)``; buys print at the ask, sells at the bid.

    A quote is published at the session open and one microsecond after every
    trade, carrying the post-trade mid.
    """
    n = spec.trades_per_day
    open_, close = spec.session
    span = close - open_
    if span < 2 * (n + 1):
        raise ValueError("session too short for the requested trade count")
    g = _kernel_increments(spec.kernel, n)
    t_cols, q_cols = [], []
    for d, ss in enumerate(np.random.SeedSequence(spec.seed).spawn(spec.n_days)):
        rng = np.random.default_rng(ss)
        eps = _signs(rng, n, spec.phi)
        size = np.maximum(1.0, np.round(rng.exponential(spec.mean_size, n)))
        if spec.rho is None:
            f = spec.theta * eps
        else:
            f = spec.theta * np.arctan(spec.rho * eps * size)
        r_bp = np.convolve(f, g)[:n] + _noise(rng, n, spec.sigma, "gaussian", 0)
        lp = np.log(spec.price0) + np.concatenate([[0.0], np.cumsum(r_bp)]) / BP
        midnight = EPOCH_BASE_US + d * US_PER_DAY
        ts = midnight + open_ + 1 + (np.arange(n) * (span - 2) // n).astype(np.int64)
        ts = np.maximum(ts, midnight + open_ + 1 + 2 * np.arange(n))
        mid = np.exp(lp[:n])
        price = mid * (1 + eps * spec.delta / BP)
        day = np.full(n, d, np.int64)
        t_cols.append((day, ts, price, size, eps.astype(np.int8)))
        q_ts = np.concatenate([[midnight + open_], ts + 1])
        q_cols.append(_quote_cols(np.full(n + 1, d, np.int64), q_ts, lp, spec.delta))
    trades = Trades(*(np.concatenate(c) for c in zip(*t_cols)))
    quotes = Quotes(*(np.concatenate(c) for c in zip(*q_cols)))
    return trades, quotes


def series_to_tape(series: IntervalSeries, interval_seconds: float = 300.0,
                   session_open_us: int = 8 * 3600 * US_PER_SECOND, delta: float = 5.0):
    """Embed an interval series into a tape that aggregates back to it.

    Interval ``n`` of day ``d`` gets at most one buy of size ``(W + v) / 2`` and
    one sell of size ``(W - v) / 2``; a quote one microsecond before each
    boundary carries ``p_n``. Returns ``(Trades, Quotes, session)`` with
    ``session`` suitable for :func:`market_data.aggregate`.
    """
    step = int(round(interval_seconds * US_PER_SECOND))
    t_cols, q_cols = [], []
    sessions = {}
    for day, a, b in series.day_bounds():
        n = b - a
        midnight = EPOCH_BASE_US + day * US_PER_DAY
        edges = midnight + session_open_us + step * np.arange(n + 1)
        sessions[day] = (int(edges[0]), int(edges[-1]))
        lp = np.concatenate([series.p_open[a:b], [series.p_open[b - 1] + series.r[b - 1]]])
        q_cols.append(_quote_cols(np.full(n + 1, day, np.int64), edges - 1, lp, delta))
        buy = 0.5 * (series.W[a:b] + series.v[a:b])
        sell = 0.5 * (series.W[a:b] - series.v[a:b])
        mid = np.exp(lp[:n])
        h = delta / BP
        for vol, sgn, off in ((buy, 1, step // 3), (sell, -1, 2 * step // 3)):
            keep = vol > 0
            k = int(keep.sum())
            t_cols.append((np.full(k, day, np.int64), edges[:-1][keep] + off,
                           mid[keep] * (1 + sgn * h), vol[keep], np.full(k, sgn, np.int8)))
    trades = Trades(*(np.concatenate(c) for c in zip(*t_cols))).sorted()
    quotes = Quotes(*(np.concatenate(c) for c in zip(*q_cols)))
    return trades, quotes, sessions


# --- Monte Carlo execution costs ------------------------------------------------

def _z(sample, exact, se):
    """Standardized error; the floor on ``se`` absorbs roundoff on deterministic paths."""
    scale = max(se, 1e-9 * max(abs(exact), 1.0))
    return (sample - exact) / scale


@dataclass(frozen=True)
class CostDistribution:
    """Sample statistics of simulated fractional costs (bp * shares)."""

    mean: float
    variance: float
    mean_se: float
    variance_se: float
    n_paths: int
    analytic_mean: float
    analytic_variance: float
    samples: np.ndarray | None = None

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "samples"}
        d["schema_version"] = 1
        d["mean_z"] = _z(self.mean, self.analytic_mean, self.mean_se)
        d["variance_z"] = _z(self.variance, self.analytic_variance, self.variance_se)
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def noise_loadings(schedule, convention: str = "strict") -> np.ndarray:
    """Coefficient of ``eta_k`` in the realized cost.

    ``strict``: volume traded strictly after interval ``k``; ``inclusive``
    also counts interval ``k`` itself. The cost variance is
    ``sigma2 * sum(loadings**2)``.
    """
    v = _as_vector(schedule)
    tail = np.cumsum(v[::-1])[::-1]
    if convention == "strict":
        return tail - v
    if convention == "inclusive":
        return tail
    raise ValueError("convention must be 'strict' or 'inclusive'")


def execution_costs(model: CostModel, schedule, n_paths: int, seed: int = 0,
                    noise: str = "gaussian", nu: float = 6.0,
                    convention: str = "strict") -> np.ndarray:
    """Realized costs ``sum_n v_n (pt_n - p_0)`` for ``n_paths`` noise paths.

    Effective prices add the propagated impact of trades up to and including
    interval ``n``, the half spread on the traded side, and accumulated
    noise: ``eta_k`` for ``k < n`` (``strict``) or ``k <= n`` (``inclusive``).
    Paths are generated in fixed-size chunks, chunk ``i`` seeded by ``(seed, i)``.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths")
    if convention not in ("strict", "inclusive"):
        raise ValueError("convention must be 'strict' or 'inclusive'")
    v = _as_vector(schedule)
    n = model.n
    gt = effective_propagator(model.kernel, n)
    impact = np.convolve(model.theta_k * v, gt)[:n]
    det = v @ (impact + np.sign(v) * model.delta)
    sigma = np.sqrt(model.sigma2)
    out = np.empty(n_paths)
    n_chunks = -(-n_paths // CHUNK)
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(n_chunks)):
        rng = np.random.default_rng(ss)
        m = min(CHUNK, n_paths - i * CHUNK)
        eta = _noise(rng, (m, n), sigma, noise, nu)
        # accumulated noise in each effective price
        if convention == "strict":
            acc = np.cumsum(eta, axis=1) - eta
        else:
            acc = np.cumsum(eta, axis=1)
        out[i * CHUNK:i * CHUNK + m] = det + acc @ v
    return out


def simulate_execution(model: CostModel, schedule, n_paths: int = 100_000, seed: int = 0,
                       keep_samples: bool = False, **kw) -> CostDistribution:
    """Monte Carlo mean and variance of execution cost with standard errors."""
    c = execution_costs(model, schedule, n_paths, seed, **kw)
    mean = float(c.mean())
    var = float(c.var(ddof=1))
    m4 = float(((c - mean) ** 4).mean())
    rep = expected_cost(model, schedule)
    return CostDistribution(
        mean=mean, variance=var, mean_se=float(np.sqrt(var / n_paths)),
        variance_se=float(np.sqrt(max(m4 - var * var, 0.0) / n_paths)),
        n_paths=n_paths, analytic_mean=rep.expected_cost, analytic_variance=rep.variance,
        samples=c if keep_samples else None,
    )


def azn_like_spec(**kw) -> MarketSpec:
    """Interval market with the AZN five-minute parameters (sigma ~ 18.7 bp)."""
    base = dict(theta=15.4, kernel=PowerLawKernel(1.40, 20.0, 0.190), sigma=18.7,
                intervals_per_day=102)
    base.update(kw)
    return MarketSpec(**base)
