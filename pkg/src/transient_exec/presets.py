"""Published calibrations for four stocks (5-minute real-time intervals).

Impact slope and kernel parameters, half spreads and noise variances, plus
the flat / U-shaped / oscillating per-share costs reported for a 1% of daily
volume buy program. Volumes per interval are not published; ``W`` below is a
nominal figure (per-share costs do not depend on it).
"""

from dataclasses import dataclass

from .impact_model import PowerLawKernel, build_cost_model

LSE_INTERVALS = 102  # 08:00-16:30
NASDAQ_INTERVALS = 78  # 09:30-16:00
NOMINAL_W = 10_000.0


@dataclass(frozen=True)
class StockPreset:
    symbol: str
    theta: float
    gamma0: float
    l0: float
    beta: float
    delta: float
    sigma2: float
    n_intervals: int
    # reported per-share costs (bp): impact flat/U/osc, spread flat/U/osc
    impact_costs: tuple
    spread_costs: tuple
    r2_att8: float
    r2_att64: float

    @property
    def kernel(self):
        return PowerLawKernel(self.gamma0, self.l0, self.beta)

    def cost_model(self, W=NOMINAL_W, n=None, delta=None, sigma2=None):
        return build_cost_model(
            self.kernel, self.theta, W,
            self.sigma2 if sigma2 is None else sigma2,
            self.delta if delta is None else delta,
            self.n_intervals if n is None else n,
        )

    def calibrated(self, W=NOMINAL_W):
        """The preset as a :class:`CalibratedModel` (linear impact, 5-minute scheme)."""
        from .calibration import CalibratedModel, ImpactFunctionFit
        from .market_data import RealTime
        return CalibratedModel(
            impact=ImpactFunctionFit("linear", self.theta, 0.0), kernel=self.kernel,
            sigma2=self.sigma2, delta=self.delta, k_max=50, scheme=RealTime(300.0),
            W=float(W), n_intervals=self.n_intervals)


PRESETS = {
    "AZN": StockPreset("AZN", 15.4, 1.40, 20.0, 0.190, 5.27, 350.81, LSE_INTERVALS,
                       (4.36, 4.29, 4.20), (5.27, 5.27, 73.52), 0.245, 0.304),
    "VOD": StockPreset("VOD", 26.0, 1.07, 4.0, 0.075, 10.12, 764.52, LSE_INTERVALS,
                       (9.82, 9.76, 9.67), (10.12, 10.12, 81.62), 0.329, 0.440),
    "AAPL": StockPreset("AAPL", 21.9, 1.01, 0.41, 0.23, 0.52, 195.95, NASDAQ_INTERVALS,
                        (3.17, 3.12, 3.12), (0.52, 0.52, 6.15), 0.302, 0.319),
    "AMZN": StockPreset("AMZN", 26.9, 1.05, 0.70, 0.23, 1.47, 395.62, NASDAQ_INTERVALS,
                        (4.09, 4.03, 4.02), (1.47, 1.47, 14.20), 0.253, 0.229),
}
