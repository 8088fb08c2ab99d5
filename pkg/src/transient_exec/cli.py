"""Command-line driver: ``transient-exec <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import market_data as md
from .calibration import CalibratedModel, calibrate
from .errors import MalformedInput, TransientExecError
from .impact_model import expected_cost, to_participation
from .optimizer import (OptimizationConfig, almgren_chriss_frontier, characteristic_lambda,
                        compare_strategies, efficient_frontier, read_schedule_csv,
                        solve_closed_form, solve_with_spread, write_frontier_csv,
                        write_frontier_json, write_schedule_csv)
from .presets import PRESETS
from .simulator import MarketSpec, TapeSpec, simulate_execution, simulate_market, simulate_tape

log = logging.getLogger("transient_exec")

SCHEMA_VERSION = 1
EXIT_USAGE = 2
EXIT_IO = 3

UNITS = """\
units:
  returns, costs, theta, delta    basis points (bp); per-share costs in bp
  sigma2                          bp^2 per interval
  variance (reports)              bp^2 * shares^2; frontier files use per-share bp^2
  volumes, X, W                   shares; participation in percent of W
  time                            intervals; timestamps in microseconds since epoch
  lambda                          1 / (bp * shares)

exit codes:
  0 success, 2 usage, 3 I/O, 10-12 market data, 20-23 calibration,
  30-31 cost model, 40-41 optimizer
"""


class UsageError(Exception):
    pass


class Outputs:
    """Tracks written files; on failure leaves a ``status.json`` flagging partial output."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.written = []

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        status = self.dir / "status.json"
        if status.exists():
            status.unlink()
        return self

    def path(self, name):
        p = self.dir / name
        self.written.append(str(p))
        return p

    def json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, default=_json_default)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and self.written:
            with open(self.dir / "status.json", "w") as fh:
                json.dump({"schema_version": SCHEMA_VERSION, "complete": False,
                           "error": f"{exc_type.__name__}: {exc}",
                           "written": self.written}, fh, indent=2)
        return False


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite(d):
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


def _parse_hhmm(text):
    h, m = text.split(":")
    return (int(h) * 3600 + int(m) * 60) * md.US_PER_SECOND


def _session(text):
    try:
        a, b = text.split("-")
        s = (_parse_hhmm(a), _parse_hhmm(b))
    except ValueError:
        raise UsageError(f"session must look like 08:00-16:30, got {text!r}") from None
    if s[1] <= s[0]:
        raise UsageError("session close must be after open")
    return s


def _float_list(text):
    items = [t for t in text.replace(" ", "").split(",") if t]
    try:
        return [float(t) for t in items]
    except ValueError:
        raise UsageError(f"not a comma-separated number list: {text!r}") from None


# --- model loading ------------------------------------------------------------

def _load_model(args) -> CalibratedModel:
    if getattr(args, "preset", None):
        sym = args.preset.upper()
        if sym not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[sym].calibrated()
    if not getattr(args, "model", None):
        raise UsageError("give --model model.json or --preset SYMBOL")
    return CalibratedModel.from_json(args.model)


def _cost_model(args, cal: CalibratedModel, no_spread=False):
    n = args.N or cal.n_intervals
    if not n:
        raise UsageError("number of intervals unknown; pass --N")
    delta = 0.0 if no_spread else cal.delta
    sigma2 = cal.sigma2 if getattr(args, "sigma2", None) is None else args.sigma2
    return cal.cost_model(int(n), delta=delta, sigma2=sigma2)


def _order_size(args, model):
    if args.X is not None:
        return float(args.X)
    return args.participation / 100.0 * float(np.sum(model.W))


# --- subcommands --------------------------------------------------------------

def _read_tape(args):
    trades = md.load_csv(args.trades, "trades")
    quotes = md.load_csv(args.quotes, "quotes")
    if len(trades) == 0:
        raise MalformedInput(f"{args.trades}: no trades")
    if len(quotes) == 0:
        raise MalformedInput(f"{args.quotes}: no quotes")
    return trades, quotes


def cmd_classify(args):
    trades, quotes = _read_tape(args)
    signed = md.classify_trades(trades, quotes, use_known_side=args.use_side)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    md.write_signed_csv(signed, out)
    log.info("signed %d of %d trades", len(signed), len(trades))


def cmd_calibrate(args):
    trades, quotes = _read_tape(args)
    if args.scheme == "rt":
        scheme = md.RealTime(args.interval)
        form = args.form or "linear"
    else:
        scheme = md.AggregatedTradeTime(args.d)
        form = args.form or "arctan"
    signed = md.classify_trades(trades, quotes, use_known_side=args.use_side)
    series = md.aggregate(signed, quotes, scheme, _session(args.session))
    if len(series) == 0:
        raise MalformedInput("no intervals after aggregation")
    with Outputs(args.out_dir) as out:
        series.to_csv(out.path("series.csv"))
        model, emp = calibrate(series, quotes, n_bins=args.n_bins, form=form,
                               k_max=args.k_max, fit_parametric=not args.tabulated)
        imp = model.impact
        with open(out.path("binned_impact.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "mean_return_bp", "count", "fit_bp"])
            for c, m, k in zip(imp.bin_center, imp.bin_mean, imp.bin_count):
                w.writerow([repr(float(c)), repr(float(m)), int(k), repr(float(imp(c)))])
        with open(out.path("propagator.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "g", "g_se", "G0_empirical", "G0_fit"])
            tab = emp.G0_tab
            fit = model.kernel.table(emp.k_max)
            for k in range(emp.k_max + 1):
                g = emp.g[k - 1] if k else 0.0
                se = emp.g_se[k - 1] if k else 0.0
                w.writerow([k, repr(float(g)), repr(float(se)), repr(float(tab[k])),
                            repr(float(fit[k]))])
        out.json("r2.json", _finite({"schema_version": SCHEMA_VERSION, "r2": model.r2,
                                     "sigma2_bp2": model.sigma2, "n_obs": model.n_obs,
                                     "condition_number": emp.condition_number,
                                     "scheme": series.scheme.name, "form": form}))
        model.to_json(out.path("model.json"))


def cmd_optimize(args):
    cal = _load_model(args)
    model = _cost_model(args, cal, no_spread=args.no_spread)
    X = _order_size(args, model)
    if args.no_spread and args.solver == "closed":
        sched, diag = solve_closed_form(model, X, args.lam), None
    else:
        cfg = OptimizationConfig(lam=args.lam, X=X, seed=args.seed, n_starts=args.starts)
        sched, diag = solve_with_spread(model, cfg)
    rep = expected_cost(model, sched, args.lam)
    with Outputs(args.out_dir) as out:
        write_schedule_csv(sched, model.W, out.path("schedule.csv"))
        x = to_participation(sched, model.W)
        out.json("report.json", {
            "schema_version": SCHEMA_VERSION,
            "X_shares": X, "N": model.n, "lam": args.lam, "no_spread": args.no_spread,
            "solver": "closed_form" if diag is None else diag.path,
            "cost": rep.to_dict(),
            "per_share_bp": _finite({"impact": rep.frac_impact, "spread": rep.frac_spread,
                                     "total": rep.frac_impact + rep.frac_spread}),
            "participation": {"max_abs": float(np.max(np.abs(x))),
                              "min": float(np.min(x)), "max": float(np.max(x))},
            "diagnostics": diag.to_dict() if diag else None,
            "model": model.summary(),
        })


def _lambda_grid(args, model, X):
    if args.lambdas is not None:
        lams = _float_list(args.lambdas)
    else:
        lc = characteristic_lambda(model, X)
        lams = [0.0] + list(lc * np.logspace(-3, 3, args.grid_points))
    if not lams:
        raise UsageError("empty lambda list")
    if min(lams) < 0:
        raise UsageError("lambdas must be non-negative")
    return lams


def cmd_frontier(args):
    cal = _load_model(args)
    model = _cost_model(args, cal)
    X = _order_size(args, model)
    if X == 0:
        raise UsageError("frontier needs a nonzero order")
    lams = _lambda_grid(args, model, X)
    pts = efficient_frontier(model, X, lams, OptimizationConfig(seed=args.seed))
    ac = almgren_chriss_frontier(model, X, lams)
    with Outputs(args.out_dir) as out:
        write_frontier_csv(pts, out.path("frontier.csv"), baseline=ac)
        write_frontier_json(pts, out.path("frontier.json"), baseline=ac)
        with open(out.path("schedules.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["curve", "lam", "interval", "v"])
            for name, curve in (("propagator", pts), ("almgren_chriss", ac)):
                for p in curve:
                    if p.schedule is None:
                        continue
                    for k, v in enumerate(p.schedule.v):
                        w.writerow([name, repr(p.lam), k, repr(float(v))])
    failed = [p for p in pts if p.error]
    if failed:
        log.warning("%d of %d frontier points failed (see frontier.json)", len(failed), len(pts))


def cmd_simulate(args):
    with open(args.spec) as fh:
        doc = json.load(fh)
    kind = doc.get("kind", "tape")
    params = doc.get("spec", {})
    if args.seed is not None:
        params["seed"] = args.seed
    with Outputs(args.out_dir) as out:
        if kind == "tape":
            spec = TapeSpec.from_dict(params)
            trades, quotes = simulate_tape(spec)
            md.write_trades_csv(trades, out.path("trades.csv"), with_side=True)
            md.write_quotes_csv(quotes, out.path("quotes.csv"))
        elif kind == "market":
            spec = MarketSpec.from_dict(params)
            simulate_market(spec).to_csv(out.path("series.csv"))
        else:
            raise UsageError(f"spec kind must be 'tape' or 'market', got {kind!r}")
        out.json("spec.json", {"schema_version": SCHEMA_VERSION, "kind": kind,
                               "spec": spec.to_dict()})


def cmd_cost_mc(args):
    cal = _load_model(args)
    sched = read_schedule_csv(args.schedule)
    args.N = len(sched.v)
    model = _cost_model(args, cal)
    dist = simulate_execution(model, sched, args.paths, args.seed, keep_samples=bool(args.samples),
                              noise=args.noise, nu=args.nu, convention=args.convention)
    d = dist.to_dict()
    d.update(convention=args.convention, noise=args.noise, seed=args.seed,
             within_3se={"mean": abs(d["mean_z"]) < 3, "variance": abs(d["variance_z"]) < 3})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(d, fh, indent=2)
    if args.samples:
        np.savetxt(args.samples, dist.samples, header="cost_bp_shares", comments="")


def cmd_compare(args):
    if args.model:
        models = [("model", CalibratedModel.from_json(args.model))]
    else:
        syms = [s.upper() for s in (args.preset or sorted(PRESETS))]
        bad = [s for s in syms if s not in PRESETS]
        if bad:
            raise UsageError(f"unknown presets {bad}")
        models = [(s, PRESETS[s].calibrated()) for s in syms]
    rows, scheds = [], []
    for name, cal in models:
        n = args.N or cal.n_intervals
        model = cal.cost_model(int(n))
        X = args.participation / 100.0 * float(np.sum(model.W))
        for strat, (sched, rep) in compare_strategies(model, X).items():
            rows.append({"name": name, "strategy": strat, "impact_bp": rep.frac_impact,
                         "spread_bp": rep.frac_spread,
                         "total_bp": rep.frac_impact + rep.frac_spread,
                         "std_bp": float(np.sqrt(rep.variance)) / X})
            scheds += [(name, strat, k, v) for k, v in enumerate(sched.v)]
    with Outputs(args.out_dir) as out:
        with open(out.path("compare.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        with open(out.path("compare_schedules.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "strategy", "interval", "v"])
            w.writerows(scheds)
        out.json("compare.json", {"schema_version": SCHEMA_VERSION,
                                  "participation_pct": args.participation, "rows": rows})
    if not args.quiet:
        print(f"{'name':6} {'strategy':12} {'impact':>8} {'spread':>8} {'total':>8}")
        for r in rows:
            print(f"{r['name']:6} {r['strategy']:12} {r['impact_bp']:8.2f} "
                  f"{r['spread_bp']:8.2f} {r['total_bp']:8.2f}")


# --- parser -------------------------------------------------------------------

def _model_args(p, preset=True):
    p.add_argument("--model", help="model JSON written by 'calibrate'")
    if preset:
        p.add_argument("--preset", help=f"published calibration: {', '.join(PRESETS)}")
    p.add_argument("--N", type=int, help="intervals in the execution window (default: model)")


def _size_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--X", type=float, help="order size in shares (negative sells)")
    g.add_argument("--participation", type=float, default=1.0,
                   help="order size as percent of total window volume (default 1)")


def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="transient-exec", formatter_class=fmt,
                                description="Propagator-model calibration and optimal execution.",
                                epilog=UNITS)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("classify", help="sign trades against prevailing quotes",
                       formatter_class=fmt, epilog=UNITS)
    s.add_argument("--trades", required=True)
    s.add_argument("--quotes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--use-side", action="store_true", help="trust a nonzero side column")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("calibrate", help="calibrate the model from a trade/quote tape",
                       formatter_class=fmt, epilog=UNITS)
    s.add_argument("--trades", required=True)
    s.add_argument("--quotes", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--scheme", choices=["rt", "att"], default="rt",
                   help="real time or aggregated trade time")
    s.add_argument("--interval", type=float, default=300.0, help="seconds (rt)")
    s.add_argument("--d", type=int, default=8, help="trades per interval (att)")
    s.add_argument("--form", choices=["linear", "arctan"],
                   help="impact function (default: linear for rt, arctan for att)")
    s.add_argument("--session", default="08:00-16:30", help="UTC trading hours HH:MM-HH:MM")
    s.add_argument("--n-bins", type=int, default=30)
    s.add_argument("--k-max", type=int, default=50)
    s.add_argument("--tabulated", action="store_true",
                   help="keep the empirical kernel instead of the power-law fit")
    s.add_argument("--use-side", action="store_true")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("optimize", help="optimal schedule for one risk aversion",
                       formatter_class=fmt, epilog=UNITS)
    _model_args(s)
    _size_args(s)
    s.add_argument("--lambda", dest="lam", type=float, default=0.0)
    s.add_argument("--no-spread", action="store_true", help="ignore the spread cost")
    s.add_argument("--solver", choices=["closed", "numerical"], default="closed",
                   help="solver used with --no-spread")
    s.add_argument("--starts", type=int, default=1, help="random restarts")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("frontier", help="efficient frontier and Almgren-Chriss baseline",
                       formatter_class=fmt, epilog=UNITS)
    _model_args(s)
    _size_args(s)
    s.add_argument("--lambdas", help="comma-separated risk aversions")
    s.add_argument("--grid-points", type=int, default=13,
                   help="log grid around the characteristic lambda when --lambdas is absent")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_frontier)

    s = sub.add_parser("simulate", help="synthetic tape or interval series from a JSON spec",
                       formatter_class=fmt, epilog=UNITS)
    s.add_argument("spec", help='JSON {"kind": "tape"|"market", "spec": {...}}')
    s.add_argument("--seed", type=int, help="override the spec seed")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("cost-mc", help="Monte Carlo cost distribution of a schedule",
                       formatter_class=fmt, epilog=UNITS)
    _model_args(s)
    s.add_argument("--schedule", required=True, help="CSV with a 'v' column")
    s.add_argument("--paths", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma2", type=float, help="override the noise variance (bp^2)")
    s.add_argument("--noise", choices=["gaussian", "student_t"], default="gaussian")
    s.add_argument("--nu", type=float, default=6.0)
    s.add_argument("--convention", choices=["strict", "inclusive"], default="strict",
                   help="whether an interval's own noise enters its effective price")
    s.add_argument("--samples", help="optional raw-sample output path")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cost_mc)

    s = sub.add_parser("compare", help="flat / U-shaped / oscillating costs at lambda = 0",
                       formatter_class=fmt, epilog=UNITS)
    s.add_argument("--model")
    s.add_argument("--preset", action="append", help="repeatable; default all presets")
    s.add_argument("--N", type=int)
    s.add_argument("--participation", type=float, default=1.0)
    s.add_argument("--quiet", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except TransientExecError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error [invalid input]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error [I/O]: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
