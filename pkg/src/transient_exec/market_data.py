"""Trade/quote ingestion, trade-sign inference and interval aggregation.

Tapes are held column-wise (numpy arrays) since realistic days carry
thousands of prints; the record types exist for construction and
inspection. Timestamps are integer microseconds since the epoch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import warnings
from typing import NamedTuple

import numpy as np

from .errors import DataWarning, MalformedRow, SchemaMismatch

US_PER_SECOND = 1_000_000
US_PER_DAY = 86_400 * US_PER_SECOND

FLAG_FIRST_QUOTE = 1  # no quote before the boundary; first quote of the day used
FLAG_PARTIAL = 2  # trailing aggregated-trade-time interval with fewer than d trades


class TradeRecord(NamedTuple):
    timestamp: int
    price: float
    size: float
    day_id: int
    side: int = 0  # +1 buy-initiated, -1 sell-initiated, 0 unknown


class QuoteRecord(NamedTuple):
    timestamp: int
    bid: float
    ask: float
    day_id: int


class SignedTrade(NamedTuple):
    timestamp: int
    signed_volume: float
    price: float
    day_id: int


def _sort_idx(day_id, timestamp):
    return np.lexsort((timestamp, day_id))


@dataclass(frozen=True)
class Trades:
    day_id: np.ndarray
    timestamp: np.ndarray
    price: np.ndarray
    size: np.ndarray
    side: np.ndarray

    def __post_init__(self):
        n = len(self.day_id)
        for name in ("timestamp", "price", "size", "side"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if n and (np.any(self.price <= 0) or np.any(self.size <= 0)):
            raise ValueError("trade prices and sizes must be positive")

    @classmethod
    def from_records(cls, records):
        recs = list(records)
        if not recs:
            return cls.empty()
        return cls(
            day_id=np.array([r.day_id for r in recs], dtype=np.int64),
            timestamp=np.array([r.timestamp for r in recs], dtype=np.int64),
            price=np.array([r.price for r in recs], dtype=float),
            size=np.array([r.size for r in recs], dtype=float),
            side=np.array([r.side or 0 for r in recs], dtype=np.int8),
        ).sorted()

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0),
                   np.zeros(0, np.int8))

    def sorted(self):
        i = _sort_idx(self.day_id, self.timestamp)
        return Trades(self.day_id[i], self.timestamp[i], self.price[i], self.size[i], self.side[i])

    def records(self):
        return [TradeRecord(int(t), float(p), float(s), int(d), int(sd))
                for d, t, p, s, sd in zip(self.day_id, self.timestamp, self.price,
                                          self.size, self.side)]

    def __len__(self):
        return len(self.day_id)


@dataclass(frozen=True)
class Quotes:
    day_id: np.ndarray
    timestamp: np.ndarray
    bid: np.ndarray
    ask: np.ndarray

    @classmethod
    def from_records(cls, records):
        recs = list(records)
        return cls(
            day_id=np.array([r.day_id for r in recs], dtype=np.int64),
            timestamp=np.array([r.timestamp for r in recs], dtype=np.int64),
            bid=np.array([r.bid for r in recs], dtype=float),
            ask=np.array([r.ask for r in recs], dtype=float),
        ).sorted()

    def sorted(self):
        i = _sort_idx(self.day_id, self.timestamp)
        return Quotes(self.day_id[i], self.timestamp[i], self.bid[i], self.ask[i])

    @property
    def mid(self):
        return 0.5 * (self.bid + self.ask)

    def records(self):
        return [QuoteRecord(int(t), float(b), float(a), int(d))
                for d, t, b, a in zip(self.day_id, self.timestamp, self.bid, self.ask)]

    def __len__(self):
        return len(self.day_id)


@dataclass(frozen=True)
class SignedTrades:
    day_id: np.ndarray
    timestamp: np.ndarray
    signed_volume: np.ndarray
    price: np.ndarray

    @classmethod
    def from_records(cls, records):
        recs = list(records)
        out = cls(
            day_id=np.array([r.day_id for r in recs], dtype=np.int64),
            timestamp=np.array([r.timestamp for r in recs], dtype=np.int64),
            signed_volume=np.array([r.signed_volume for r in recs], dtype=float),
            price=np.array([r.price for r in recs], dtype=float),
        )
        i = _sort_idx(out.day_id, out.timestamp)
        return cls(out.day_id[i], out.timestamp[i], out.signed_volume[i], out.price[i])

    def records(self):
        return [SignedTrade(int(t), float(v), float(p), int(d))
                for d, t, v, p in zip(self.day_id, self.timestamp, self.signed_volume,
                                      self.price)]

    def __len__(self):
        return len(self.day_id)


@dataclass(frozen=True)
class MidSeries:
    """Log mid prices ``(day_id, timestamp, log_mid)`` sorted by day and time."""

    day_id: np.ndarray
    timestamp: np.ndarray
    log_mid: np.ndarray

    @classmethod
    def from_quotes(cls, quotes):
        q = _as_quotes(quotes)
        return cls(q.day_id, q.timestamp, np.log(q.mid))


def _as_trades(x) -> Trades:
    return x if isinstance(x, Trades) else Trades.from_records(x)


def _as_quotes(x) -> Quotes:
    return x if isinstance(x, Quotes) else Quotes.from_records(x)


def _day_slices(day_id):
    """Yield ``(day, start, stop)`` for contiguous runs of a sorted day column."""
    if len(day_id) == 0:
        return
    cuts = np.flatnonzero(np.diff(day_id)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [len(day_id)]])
    for a, b in zip(starts, stops):
        yield int(day_id[a]), int(a), int(b)


# --- aggregation schemes -----------------------------------------------------

@dataclass(frozen=True)
class RealTime:
    interval_length: float  # seconds

    def __post_init__(self):
        if not self.interval_length > 0:
            raise ValueError("interval_length must be positive")

    @property
    def name(self):
        return f"real_time_{self.interval_length:g}s"


@dataclass(frozen=True)
class AggregatedTradeTime:
    d: int = 1

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")

    @property
    def name(self):
        return "trade_time" if self.d == 1 else f"aggregated_trade_time_{self.d}"


def TradeTime() -> AggregatedTradeTime:
    """Transaction-by-transaction clock, i.e. aggregation of one trade."""
    return AggregatedTradeTime(1)


def scheme_from_dict(d: dict):
    kind = d["type"]
    if kind == "real_time":
        return RealTime(float(d["interval_length"]))
    if kind in ("trade_time", "aggregated_trade_time"):
        return AggregatedTradeTime(int(d.get("d", 1)))
    raise ValueError(f"unknown scheme {kind!r}")


def scheme_to_dict(scheme) -> dict:
    if isinstance(scheme, RealTime):
        return {"type": "real_time", "interval_length": scheme.interval_length}
    return {"type": "aggregated_trade_time", "d": scheme.d}


# --- interval series ---------------------------------------------------------

SERIES_COLUMNS = ("day_id", "interval_index", "p_open", "r", "v", "v_nor", "W")


@dataclass(frozen=True)
class IntervalSeries:
    """Per-interval log mid at open, log return, imbalance and volume."""

    day_id: np.ndarray
    interval_index: np.ndarray
    p_open: np.ndarray
    r: np.ndarray
    v: np.ndarray
    v_nor: np.ndarray
    W: np.ndarray
    scheme: object = None
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flags is None:
            object.__setattr__(self, "flags", np.zeros(len(self.day_id), dtype=np.int8))

    def __len__(self):
        return len(self.day_id)

    def day_bounds(self):
        return list(_day_slices(self.day_id))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            for row in zip(*(getattr(self, c) for c in SERIES_COLUMNS)):
                w.writerow([int(row[0]), int(row[1])] + [repr(float(x)) for x in row[2:]])

    @classmethod
    def from_csv(cls, path, scheme=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(h.strip() for h in rows[0]) != SERIES_COLUMNS:
            raise SchemaMismatch(f"expected header {','.join(SERIES_COLUMNS)}")
        data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, 7)
        return cls(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2],
                   data[:, 3], data[:, 4], data[:, 5], data[:, 6], scheme)

    @classmethod
    def concat(cls, parts, scheme=None):
        parts = list(parts)
        if not parts:
            e = np.zeros(0)
            return cls(e.astype(np.int64), e.astype(np.int64), e, e, e, e, e, scheme,
                       np.zeros(0, np.int8))
        cols = {c: np.concatenate([getattr(p, c) for p in parts])
                for c in SERIES_COLUMNS + ("flags",)}
        return cls(scheme=scheme if scheme is not None else parts[0].scheme, **cols)


# --- Lee-Ready ---------------------------------------------------------------

def prevailing_index(quote_ts: np.ndarray, ts) -> np.ndarray:
    """Index of the last quote strictly before each timestamp (-1 if none)."""
    return np.searchsorted(quote_ts, ts, side="left") - 1


def classify_trades(trades, quotes, use_known_side: bool = False) -> SignedTrades:
    """Sign trades by comparing their price to the prevailing quote midpoint.

    The prevailing quote is the last one of the same day with a timestamp
    strictly before the trade. Trades at the mid and trades before the first
    quote of their day are dropped (counted in a ``DataWarning``).
    With ``use_known_side`` a nonzero ``side`` column overrides inference.
    """
    t = _as_trades(trades)
    q = _as_quotes(quotes)
    if len(t) == 0:
        return SignedTrades(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0),
                            np.zeros(0))
    sign = np.zeros(len(t))
    quoted = np.zeros(len(t), dtype=bool)
    qdays = {d: (a, b) for d, a, b in _day_slices(q.day_id)}
    mid = q.mid
    for day, a, b in _day_slices(t.day_id):
        if day not in qdays:
            continue
        qa, qb = qdays[day]
        idx = prevailing_index(q.timestamp[qa:qb], t.timestamp[a:b])
        ok = idx >= 0
        quoted[a:b] = ok
        m = np.where(ok, mid[qa:qb][np.maximum(idx, 0)], np.nan)
        with np.errstate(invalid="ignore"):
            sign[a:b] = np.where(ok, np.sign(t.price[a:b] - m), 0.0)
    if use_known_side:
        known = t.side != 0
        sign[known] = t.side[known]
        quoted |= known
    no_quote = int((~quoted).sum())
    at_mid = int(((sign == 0) & quoted).sum())
    if no_quote:
        warnings.warn(f"{no_quote} trades before the first quote of their day dropped",
                      DataWarning, stacklevel=2)
    if at_mid:
        warnings.warn(f"{at_mid} trades at the mid price left unsigned and dropped",
                      DataWarning, stacklevel=2)
    keep = sign != 0
    return SignedTrades(t.day_id[keep], t.timestamp[keep], sign[keep] * t.size[keep],
                        t.price[keep])


# --- aggregation -------------------------------------------------------------

def _session_bounds(session, day, first_ts):
    if isinstance(session, dict):
        return session[day]
    midnight = (int(first_ts) // US_PER_DAY) * US_PER_DAY
    return midnight + int(session[0]), midnight + int(session[1])


def _sample_mid(m_ts, m_lp, boundaries):
    idx = prevailing_index(m_ts, boundaries)
    flags = np.where(idx < 0, FLAG_FIRST_QUOTE, 0).astype(np.int8)
    return m_lp[np.maximum(idx, 0)], flags


def aggregate(signed_trades, mids, scheme, session=None) -> IntervalSeries:
    """Aggregate signed trades into an :class:`IntervalSeries`.

    Args:
        signed_trades: output of :func:`classify_trades` (or records).
        mids: :class:`MidSeries` or quotes from which log mids are taken.
        scheme: :class:`RealTime` or :class:`AggregatedTradeTime`.
        session: ``(open, close)`` in microseconds after UTC midnight, or a
            ``{day_id: (open_us, close_us)}`` mapping of absolute times.
            Required for real-time intervals; for trade-time schemes it only
            filters trades.

    Real-time days yield ``floor((close - open) / interval)`` intervals and
    trades beyond the last full interval are discarded. Aggregated trade
    time puts a boundary at every ``d``-th trade; a trailing group with fewer
    trades is kept and flagged so day volumes are conserved.
    """
    st = signed_trades if isinstance(signed_trades, SignedTrades) \
        else SignedTrades.from_records(signed_trades)
    if not isinstance(mids, MidSeries):
        mids = MidSeries.from_quotes(mids)
    if isinstance(scheme, RealTime) and session is None:
        raise ValueError("real-time aggregation needs session bounds")

    mdays = {d: (a, b) for d, a, b in _day_slices(mids.day_id)}
    parts = []
    for day, a, b in _day_slices(st.day_id):
        if day not in mdays:
            warnings.warn(f"day {day}: no quotes, skipped", DataWarning, stacklevel=2)
            continue
        ma, mb = mdays[day]
        m_ts, m_lp = mids.timestamp[ma:mb], mids.log_mid[ma:mb]
        ts, vol = st.timestamp[a:b], st.signed_volume[a:b]

        if session is not None:
            open_, close = _session_bounds(session, day, ts[0] if len(ts) else m_ts[0])
            inside = (ts >= open_) & (ts < close)
            ts, vol = ts[inside], vol[inside]
        if len(ts) == 0:
            warnings.warn(f"day {day}: no trades, skipped", DataWarning, stacklevel=2)
            continue

        if isinstance(scheme, RealTime):
            step = int(round(scheme.interval_length * US_PER_SECOND))
            n = (close - open_) // step
            if n < 1:
                warnings.warn(f"day {day}: session shorter than one interval", DataWarning,
                              stacklevel=2)
                continue
            edges = open_ + step * np.arange(n + 1)
            keep = ts < edges[-1]
            ts, vol = ts[keep], vol[keep]
            group = np.searchsorted(edges, ts, side="right") - 1
            v = np.bincount(group, weights=vol, minlength=n)
            W = np.bincount(group, weights=np.abs(vol), minlength=n)
            p, flags = _sample_mid(m_ts, m_lp, edges)
            part_flags = np.zeros(n, np.int8)
        else:
            d = scheme.d
            m = len(ts)
            n = -(-m // d)
            group = np.arange(m) // d
            v = np.bincount(group, weights=vol, minlength=n)
            W = np.bincount(group, weights=np.abs(vol), minlength=n)
            starts = ts[np.arange(n) * d]
            p_start, flags = _sample_mid(m_ts, m_lp, starts)
            # closing level: the mid prevailing after the day's last trade
            p_end = m_lp[-1] if m_ts[-1] >= ts[-1] else m_lp[prevailing_index(m_ts, ts[-1])]
            p = np.concatenate([p_start, [p_end]])
            flags = np.concatenate([flags, [0]]).astype(np.int8)
            part_flags = np.zeros(n, np.int8)
            if m % d:
                part_flags[-1] = FLAG_PARTIAL

        with np.errstate(invalid="ignore", divide="ignore"):
            v_nor = np.where(W > 0, v / np.where(W > 0, W, 1.0), 0.0)
        parts.append(IntervalSeries(
            day_id=np.full(n, day, np.int64), interval_index=np.arange(n, dtype=np.int64),
            p_open=p[:-1], r=np.diff(p), v=v, v_nor=v_nor, W=W, scheme=scheme,
            flags=(flags[:-1] | part_flags).astype(np.int8),
        ))
    return IntervalSeries.concat(parts, scheme)


# --- CSV ---------------------------------------------------------------------

TRADE_COLUMNS = ("day_id", "timestamp_us", "price", "size")
QUOTE_COLUMNS = ("day_id", "timestamp_us", "bid", "ask")


def load_csv(path, schema: str):
    """Read a trades or quotes CSV into a column table sorted by (day, time).

    Raises:
        SchemaMismatch: header does not match the schema.
        MalformedRow: unparsable or invalid row (1-based data row index).
    """
    if schema not in ("trades", "quotes"):
        raise ValueError("schema must be 'trades' or 'quotes'")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file, header required") from None
        cols = TRADE_COLUMNS if schema == "trades" else QUOTE_COLUMNS
        has_side = schema == "trades" and header == cols + ("side",)
        if header != cols and not has_side:
            raise SchemaMismatch(f"{path}: header {','.join(header)} != {','.join(cols)}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(i, f"expected {len(header)} fields, got {len(row)}")
            try:
                day, ts = int(row[0]), int(row[1])
                a, b = float(row[2]), float(row[3])
                side = 0
                if has_side and row[4].strip():
                    side = int(row[4])
            except ValueError as exc:
                raise MalformedRow(i, str(exc)) from None
            if schema == "trades":
                if a <= 0 or b <= 0:
                    raise MalformedRow(i, "price and size must be positive")
                if side not in (-1, 0, 1):
                    raise MalformedRow(i, "side must be -1, 0 or 1")
                rows.append((day, ts, a, b, side))
            else:
                if not (b >= a > 0):
                    raise MalformedRow(i, "need ask >= bid > 0")
                rows.append((day, ts, a, b))
    if schema == "trades":
        if not rows:
            return Trades.empty()
        arr = list(zip(*rows))
        return Trades(np.array(arr[0], np.int64), np.array(arr[1], np.int64),
                      np.array(arr[2]), np.array(arr[3]), np.array(arr[4], np.int8)).sorted()
    if not rows:
        return Quotes(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
    arr = list(zip(*rows))
    return Quotes(np.array(arr[0], np.int64), np.array(arr[1], np.int64), np.array(arr[2]),
                  np.array(arr[3])).sorted()


def write_trades_csv(trades: Trades, path, with_side=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRADE_COLUMNS + (("side",) if with_side else ()))
        for d, t, p, s, sd in zip(trades.day_id, trades.timestamp, trades.price,
                                  trades.size, trades.side):
            row = [int(d), int(t), repr(float(p)), repr(float(s))]
            w.writerow(row + ([int(sd)] if with_side else []))


def write_quotes_csv(quotes: Quotes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUOTE_COLUMNS)
        for d, t, b, a in zip(quotes.day_id, quotes.timestamp, quotes.bid, quotes.ask):
            w.writerow([int(d), int(t), repr(float(b)), repr(float(a))])


def write_signed_csv(signed: SignedTrades, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("day_id", "timestamp_us", "signed_volume", "price"))
        for d, t, v, p in zip(signed.day_id, signed.timestamp, signed.signed_volume,
                              signed.price):
            w.writerow([int(d), int(t), repr(float(v)), repr(float(p))])
