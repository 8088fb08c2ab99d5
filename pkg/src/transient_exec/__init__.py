"""Transient-impact (propagator) model: calibration and optimal execution."""

from .calibration import (CalibratedModel, EmpiricalPropagator, ImpactFunctionFit, KernelFit,
                          NoiseEstimate, SpreadEstimate, calibrate, estimate_impact_function,
                          estimate_noise_variance, estimate_spread, fit_kernel,
                          r_squared, regress_propagator)
from .errors import *  # noqa: F401,F403
from .impact_model import (CostModel, CostReport, PowerLawKernel, PropagatorKernel, Schedule,
                           TabulatedKernel, build_cost_model, cost_variance,
                           effective_propagator, expected_cost, objective, to_participation)
from .market_data import (AggregatedTradeTime, IntervalSeries, Quotes, RealTime, SignedTrades,
                          Trades, TradeTime, aggregate, classify_trades, load_csv)
from .optimizer import (FrontierPoint, OptimizationConfig, SolveDiagnostics,
                        almgren_chriss_frontier, almgren_chriss_schedule, bertsimas_lo_flat,
                        compare_strategies, efficient_frontier, match_variance,
                        solve_closed_form, solve_with_spread)
from .presets import PRESETS
from .simulator import (CostDistribution, MarketSpec, TapeSpec, series_to_tape,
                        simulate_execution, simulate_market, simulate_tape)

__version__ = "0.1.0"
