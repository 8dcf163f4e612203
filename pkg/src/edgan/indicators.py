"""Technical indicators computed from daily OHLCV series.

All functions take plain float64 arrays and return an ``IndicatorSeries``:
the full-length value array plus the number of leading warm-up entries that
are not yet meaningful. Warm-up entries are never fabricated downstream; the
feature matrix drops them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, DomainError

# Fixed column order of the dynamic feature matrix.
FEATURE_COLUMNS = (
    "open",
    "high",
    "low",
    "close",
    "adj_close",
    "volume",
    "rsi",
    "stoch_rsi",
    "ema",
    "macd",
    "bollinger_width",
    "log_momentum",
)
TARGET_COLUMN_INDEX = FEATURE_COLUMNS.index("close")


class IndicatorSeries(NamedTuple):
    values: np.ndarray
    warmup: int


@dataclass(frozen=True)
class IndicatorConfig:
    """Periods for the indicator set; all values are trading days."""

    rsi_period: int = 14
    stoch_rsi_period: int = 14
    ema_period: int = 20
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9
    bollinger_period: int = 20
    bollinger_width: float = 2.0
    momentum_lag: int = 1

    def __post_init__(self):
        periods = {
            "rsi_period": self.rsi_period,
            "stoch_rsi_period": self.stoch_rsi_period,
            "ema_period": self.ema_period,
            "macd_fast": self.macd_fast,
            "macd_slow": self.macd_slow,
            "macd_signal": self.macd_signal,
            "bollinger_period": self.bollinger_period,
            "momentum_lag": self.momentum_lag,
        }
        for name, value in periods.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.macd_fast >= self.macd_slow:
            raise ConfigError(f"macd_fast ({self.macd_fast}) must be < macd_slow ({self.macd_slow})")
        if self.bollinger_width < 0:
            raise ConfigError(f"bollinger_width must be >= 0, got {self.bollinger_width}")

    def warmup(self) -> int:
        """Leading rows consumed before every feature column is defined."""
        return max(
            self.rsi_period,
            self.rsi_period + self.stoch_rsi_period - 1,
            self.bollinger_period - 1,
            self.momentum_lag,
        )

    def binding_indicator(self) -> str:
        """Name of the indicator whose warm-up is the longest."""
        candidates = {
            "rsi": self.rsi_period,
            "stoch_rsi": self.rsi_period + self.stoch_rsi_period - 1,
            "bollinger": self.bollinger_period - 1,
            "log_momentum": self.momentum_lag,
        }
        return max(candidates, key=lambda k: candidates[k])


def _as_series(prices) -> np.ndarray:
    arr = np.asarray(prices, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"expected a non-empty 1-D series, got shape {arr.shape}")
    return arr


def ema(prices, period: int) -> IndicatorSeries:
    """Exponential moving average with alpha = 2 / (period + 1)."""
    p = _as_series(prices)
    if period < 1:
        raise ConfigError(f"ema period must be >= 1, got {period}")
    alpha = 2.0 / (period + 1.0)
    out = np.empty_like(p)
    out[0] = p[0]
    for t in range(1, p.size):
        out[t] = alpha * p[t] + (1.0 - alpha) * out[t - 1]
    return IndicatorSeries(out, 0)


def rsi(prices, period: int) -> IndicatorSeries:
    """Wilder's relative strength index in [0, 100].

    Average gains/losses are seeded over the first ``period`` changes and then
    Wilder-smoothed. Zero average loss maps to 100 (50 when both averages are
    zero); the first ``period`` outputs are warm-up.
    """
    p = _as_series(prices)
    if p.size < period + 1:
        raise DataError(f"rsi needs at least period+1={period + 1} prices, got {p.size}")
    deltas = np.diff(p)
    gains = np.where(deltas > 0.0, deltas, 0.0)
    losses = np.where(deltas < 0.0, -deltas, 0.0)
    out = np.zeros_like(p)
    avg_gain = gains[:period].mean()
    avg_loss = losses[:period].mean()
    out[period] = _rsi_value(avg_gain, avg_loss)
    for t in range(period + 1, p.size):
        avg_gain = (avg_gain * (period - 1) + gains[t - 1]) / period
        avg_loss = (avg_loss * (period - 1) + losses[t - 1]) / period
        out[t] = _rsi_value(avg_gain, avg_loss)
    return IndicatorSeries(out, period)


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def stoch_rsi(rsi_series: IndicatorSeries, period: int) -> IndicatorSeries:
    """Position of RSI within its rolling min/max window, in [0, 1].

    A window with zero range maps to 0.5.
    """
    if period < 1:
        raise ConfigError(f"stoch_rsi period must be >= 1, got {period}")
    values, warm = rsi_series
    start = warm + period - 1
    if start >= values.size:
        raise DataError(f"stoch_rsi needs {start + 1} rows, got {values.size}")
    out = np.zeros_like(values)
    for t in range(start, values.size):
        window = values[t - period + 1 : t + 1]
        lo = window.min()
        hi = window.max()
        out[t] = 0.5 if hi == lo else (values[t] - lo) / (hi - lo)
    return IndicatorSeries(out, start)


def macd(prices, fast: int, slow: int, signal: int) -> tuple[IndicatorSeries, IndicatorSeries]:
    """MACD line (fast EMA minus slow EMA) and its signal EMA."""
    if fast >= slow:
        raise ConfigError(f"macd fast period ({fast}) must be < slow period ({slow})")
    p = _as_series(prices)
    if p.size < slow:
        raise DataError(f"macd needs at least {slow} prices, got {p.size}")
    line = ema(p, fast).values - ema(p, slow).values
    signal_line = ema(line, signal).values
    return IndicatorSeries(line, 0), IndicatorSeries(signal_line, 0)


def bollinger(prices, period: int, width: float) -> tuple[IndicatorSeries, IndicatorSeries, IndicatorSeries]:
    """Simple-moving-average middle band with +-width population std bands."""
    p = _as_series(prices)
    if period < 1:
        raise ConfigError(f"bollinger period must be >= 1, got {period}")
    if p.size < period:
        raise DataError(f"bollinger needs at least {period} prices, got {p.size}")
    warm = period - 1
    middle = np.zeros_like(p)
    spread = np.zeros_like(p)
    for t in range(warm, p.size):
        window = p[t - period + 1 : t + 1]
        middle[t] = window.mean()
        spread[t] = width * window.std()
    upper = middle + spread
    lower = middle - spread
    return IndicatorSeries(middle, warm), IndicatorSeries(upper, warm), IndicatorSeries(lower, warm)


def log_momentum(prices, lag: int) -> IndicatorSeries:
    """ln(p[t] / p[t-lag]); prices must be strictly positive."""
    p = _as_series(prices)
    if lag < 1:
        raise ConfigError(f"momentum lag must be >= 1, got {lag}")
    if p.size <= lag:
        raise DataError(f"log_momentum needs more than lag={lag} prices, got {p.size}")
    if np.any(p <= 0.0):
        raise DomainError("log_momentum requires strictly positive prices")
    out = np.zeros_like(p)
    out[lag:] = np.log(p[lag:] / p[:-lag])
    return IndicatorSeries(out, lag)


def build_feature_matrix(bars, cfg: IndicatorConfig) -> tuple[np.ndarray, int]:
    """Assemble the per-day dynamic feature matrix from raw bars.

    ``bars`` is any object exposing open/high/low/close/adj_close/volume
    arrays (see ``edgan.data.StockSeries.columns``). Returns the matrix with
    warm-up rows removed and the warm-up offset itself, so callers can realign
    dates. Columns follow ``FEATURE_COLUMNS``; the Bollinger feature is the
    band width (upper minus lower) and MACD contributes the line only.
    """
    close = _as_series(bars.close)
    warm = cfg.warmup()
    if close.size <= warm:
        raise DataError(
            f"series of length {close.size} is shorter than the {warm}-row warm-up "
            f"(binding indicator: {cfg.binding_indicator()})"
        )
    rsi_s = rsi(close, cfg.rsi_period)
    stoch_s = stoch_rsi(rsi_s, cfg.stoch_rsi_period)
    ema_s = ema(close, cfg.ema_period)
    macd_line, _ = macd(close, cfg.macd_fast, cfg.macd_slow, cfg.macd_signal)
    _, upper, lower = bollinger(close, cfg.bollinger_period, cfg.bollinger_width)
    momentum = log_momentum(close, cfg.momentum_lag)

    matrix = np.column_stack(
        [
            np.asarray(bars.open, dtype=np.float64),
            np.asarray(bars.high, dtype=np.float64),
            np.asarray(bars.low, dtype=np.float64),
            close,
            np.asarray(bars.adj_close, dtype=np.float64),
            np.asarray(bars.volume, dtype=np.float64),
            rsi_s.values,
            stoch_s.values,
            ema_s.values,
            macd_line.values,
            upper.values - lower.values,
            momentum.values,
        ]
    )
    return matrix[warm:], warm
