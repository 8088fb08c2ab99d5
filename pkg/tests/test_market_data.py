import warnings

import numpy as np
import pytest

from transient_exec import market_data as md
from transient_exec.errors import DataWarning, MalformedRow, SchemaMismatch
from transient_exec.impact_model import PowerLawKernel
from transient_exec.simulator import MarketSpec, TapeSpec, series_to_tape, simulate_market, \
    simulate_tape

US = md.US_PER_SECOND


def T(day, ts, price, size, side=0):
    return md.TradeRecord(timestamp=ts, price=price, size=size, day_id=day, side=side)


def Q(day, ts, bid, ask):
    return md.QuoteRecord(timestamp=ts, bid=bid, ask=ask, day_id=day)


def S(day, ts, v):
    return md.SignedTrade(timestamp=ts, signed_volume=v, price=0.0, day_id=day)


def brute_force_signs(trades, quotes):
    """Loop-based sign inference: last same-day quote strictly before the trade."""
    out = []
    for t, p, s, d, _ in trades.records():
        best = None
        for qt, b, a, qd in quotes.records():
            if qd == d and qt < t and (best is None or qt >= best[0]):
                best = (qt, 0.5 * (a + b))
        if best is None or p == best[1]:
            continue
        out.append((d, t, np.sign(p - best[1]) * s))
    return out


def random_tape(rng, n_trades=60, n_quotes=30, days=2):
    tr, qu = [], []
    for d in range(days):
        qts = np.sort(rng.choice(1000, n_quotes, replace=False))
        mids = 100 + np.cumsum(rng.normal(0, 0.05, n_quotes))
        for t, m in zip(qts, mids):
            qu.append(Q(d, int(t), round(m - 0.05, 2), round(m + 0.05, 2)))
        for t in rng.integers(0, 1000, n_trades):
            m = mids[max(np.searchsorted(qts, t) - 1, 0)]
            p = round(m + rng.choice([-0.05, 0.0, 0.05, 0.02]), 2)
            tr.append(T(d, int(t), p, float(rng.integers(1, 10) * 100)))
    return md.Trades.from_records(tr), md.Quotes.from_records(qu)


@pytest.mark.parametrize("seed", range(5))
def test_lee_ready_matches_brute_force(seed):
    trades, quotes = random_tape(np.random.default_rng(seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        st = md.classify_trades(trades, quotes)
    want = brute_force_signs(trades, quotes)
    got = list(zip(st.day_id.tolist(), st.timestamp.tolist(), st.signed_volume.tolist()))
    assert sorted(got) == sorted((int(d), int(t), float(v)) for d, t, v in want)


def test_quote_at_same_timestamp_is_not_prevailing():
    trades = md.Trades.from_records([T(0, 10, 100.05, 100.0)])
    quotes = md.Quotes.from_records([Q(0, 5, 99.9, 100.0),
                                     Q(0, 10, 100.0, 100.2)])
    st = md.classify_trades(trades, quotes)
    assert st.signed_volume.tolist() == [100.0]  # above 99.95, below 100.1


def test_at_mid_and_unquoted_dropped_with_warnings():
    trades = md.Trades.from_records([T(0, 1, 100.0, 1.0),
                                     T(0, 5, 100.0, 1.0),
                                     T(0, 6, 100.1, 1.0)])
    quotes = md.Quotes.from_records([Q(0, 2, 99.9, 100.1)])
    with pytest.warns(DataWarning) as rec:
        st = md.classify_trades(trades, quotes)
    msgs = " ".join(str(w.message) for w in rec)
    assert "1 trades before the first quote" in msgs and "1 trades at the mid" in msgs
    assert st.signed_volume.tolist() == [1.0]


def test_known_side_overrides():
    trades = md.Trades.from_records([T(0, 5, 100.0, 3.0, -1)])
    quotes = md.Quotes.from_records([Q(0, 2, 99.9, 100.1)])
    st = md.classify_trades(trades, quotes, use_known_side=True)
    assert st.signed_volume.tolist() == [-3.0]


def test_real_time_aggregation_by_hand():
    open_, step = 1000 * US, 60 * US
    signed = md.SignedTrades.from_records([
        S(0, open_ + 1, 5.0), S(0, open_ + 2, -3.0),
        S(0, open_ + step + 5, 2.0),
        S(0, open_ + 2 * step + 1, 7.0),  # beyond the last full interval
    ])
    quotes = md.Quotes.from_records([Q(0, open_ - 1, 99.0, 101.0),
                                     Q(0, open_ + step - 1, 109.0, 111.0)])
    s = md.aggregate(signed, quotes, md.RealTime(60.0), (open_, open_ + 2 * step + 30 * US))
    assert s.v.tolist() == [2.0, 2.0]
    assert s.W.tolist() == [8.0, 2.0]
    assert s.v_nor.tolist() == [0.25, 1.0]
    assert s.p_open[0] == pytest.approx(np.log(100.0))
    assert s.r[0] == pytest.approx(np.log(1.1))
    assert s.r[1] == 0.0


def test_trade_time_keeps_partial_group():
    signed = md.SignedTrades.from_records(
        [S(0, t, float((-1) ** t)) for t in range(1, 8)])
    quotes = md.Quotes.from_records([Q(0, 0, 99.0, 101.0)])
    s = md.aggregate(signed, quotes, md.AggregatedTradeTime(3))
    assert len(s) == 3
    assert s.W.sum() == 7.0
    assert s.flags.tolist()[-1] & md.FLAG_PARTIAL
    assert md.TradeTime().d == 1


def test_real_time_needs_session():
    with pytest.raises(ValueError):
        md.aggregate(md.SignedTrades.from_records([]), md.Quotes.from_records([]),
                     md.RealTime(300.0))


def test_volume_conservation_on_simulated_tape(quiet_data_warnings):
    spec = TapeSpec(theta=1.0, kernel=PowerLawKernel(1.0, 2.0, 0.4), sigma=1.0,
                    trades_per_day=500, n_days=3, seed=3)
    trades, quotes = simulate_tape(spec)
    st = md.classify_trades(trades, quotes)
    assert np.array_equal(np.sign(st.signed_volume), trades.side)
    for scheme in (md.AggregatedTradeTime(7), md.RealTime(300.0)):
        s = md.aggregate(st, quotes, scheme, spec.session)
        assert s.W.sum() == pytest.approx(trades.size.sum())
        assert s.v.sum() == pytest.approx(st.signed_volume.sum())
        assert np.all(np.abs(s.v_nor) <= 1)


def test_series_tape_round_trip(quiet_data_warnings):
    series = simulate_market(MarketSpec(theta=20.0, kernel=PowerLawKernel(1.0, 3.0, 0.2),
                                        sigma=10.0, intervals_per_day=20, n_days=4, seed=1))
    trades, quotes, session = series_to_tape(series, 300.0)
    back = md.aggregate(md.classify_trades(trades, quotes), quotes, md.RealTime(300.0), session)
    assert np.allclose(back.v, series.v, atol=1e-9)
    assert np.allclose(back.W, series.W)
    assert np.allclose(back.r, series.r, atol=1e-12)
    assert np.allclose(back.p_open, series.p_open, atol=1e-12)


def test_csv_round_trip(tmp_path):
    trades, quotes = random_tape(np.random.default_rng(0))
    md.write_trades_csv(trades, tmp_path / "t.csv")
    md.write_quotes_csv(quotes, tmp_path / "q.csv")
    t2 = md.load_csv(tmp_path / "t.csv", "trades")
    q2 = md.load_csv(tmp_path / "q.csv", "quotes")
    assert np.array_equal(t2.price, trades.price) and np.array_equal(t2.timestamp, trades.timestamp)
    assert np.array_equal(q2.ask, quotes.ask)


def test_series_csv_round_trip(tmp_path):
    s = simulate_market(MarketSpec(theta=5.0, kernel=PowerLawKernel(1.0, 1.0, 0.5),
                                   sigma=1.0, intervals_per_day=5, n_days=2))
    s.to_csv(tmp_path / "s.csv")
    s2 = md.IntervalSeries.from_csv(tmp_path / "s.csv")
    for c in md.SERIES_COLUMNS:
        assert np.array_equal(getattr(s, c), getattr(s2, c))


@pytest.mark.parametrize("body,exc", [
    ("day_id,timestamp_us,price\n", SchemaMismatch),
    ("", SchemaMismatch),
    ("day_id,timestamp_us,price,size\n0,1,abc,100\n", MalformedRow),
    ("day_id,timestamp_us,price,size\n0,1,-5,100\n", MalformedRow),
    ("day_id,timestamp_us,price,size\n0,1,5\n", MalformedRow),
])
def test_csv_errors(tmp_path, body, exc):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(exc):
        md.load_csv(p, "trades")


def test_malformed_row_reports_index(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("day_id,timestamp_us,bid,ask\n0,1,99,100\n0,2,101,100\n")
    with pytest.raises(MalformedRow) as e:
        md.load_csv(p, "quotes")
    assert e.value.row == 2
