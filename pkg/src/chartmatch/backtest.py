"""One-bar-horizon trade simulation under stop-loss and commission rules.

A LONG/SHORT prediction at bar t enters at close[t] and resolves during bar
t+1: if the adverse extreme of bar t+1 breaches the stop price, the trade
exits at the stop (checked first; OHLC bars cannot order intrabar events, so
the conservative reading books the loss), otherwise it exits at close[t+1].
HOLD takes no position. Commission applies per fill, twice per round trip.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AlignmentError, ConfigError
from .market_data import CandleSeries, DirectionLabel


@dataclass(frozen=True)
class BacktestConfig:
    stop_loss: float = 0.0075
    take_profit: float | None = None  # intentionally unsupported
    commission: float = 0.0004        # per fill
    initial_equity: float = 1.0

    def __post_init__(self):
        if not 0 < self.stop_loss < 1:
            raise ConfigError(f"stop_loss must be in (0, 1), got {self.stop_loss}")
        if self.take_profit is not None:
            raise ConfigError("take profit is disabled: trades exit at bar close "
                              "or at the stop")
        if self.commission < 0:
            raise ConfigError("commission must be non-negative")
        if self.initial_equity <= 0:
            raise ConfigError("initial_equity must be positive")


@dataclass(frozen=True)
class Trade:
    entry_index: int
    entry_time: int
    side: str                  # "long" | "short"
    entry_price: float
    exit_price: float
    exit_reason: str           # "bar_close" | "stop_loss"
    net_return: float


@dataclass(frozen=True)
class EquityCurve:
    """Compounded equity, one point per evaluated bar plus the start."""

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise AlignmentError("equity timestamps and values must align")
        if np.any(np.asarray(self.values) <= 0):
            raise ValueError("equity must stay strictly positive")

    @property
    def final(self) -> float:
        return float(self.values[-1])


def simulate(series: CandleSeries, predictions: Sequence[DirectionLabel],
             start_index: int, config: BacktestConfig = BacktestConfig()
             ) -> tuple[EquityCurve, list[Trade]]:
    """Run predictions[i] on bar start_index + i; each needs a next bar."""
    n = len(predictions)
    if n == 0:
        raise AlignmentError("no predictions to simulate")
    if start_index < 0 or start_index + n > len(series) - 1:
        raise AlignmentError(
            f"{n} predictions from bar {start_index} need bars up to "
            f"{start_index + n}, series has {len(series)}")

    equity = config.initial_equity
    timestamps = [series[start_index].open_time]
    values = [equity]
    trades: list[Trade] = []
    for offset, label in enumerate(predictions):
        t = start_index + offset
        entry = series[t].close
        nxt = series[t + 1]
        if label == DirectionLabel.LONG:
            stop_price = entry * (1.0 - config.stop_loss)
            if nxt.low <= stop_price:
                gross, exit_price, reason = -config.stop_loss, stop_price, "stop_loss"
            else:
                gross, exit_price, reason = nxt.close / entry - 1.0, nxt.close, "bar_close"
            side = "long"
        elif label == DirectionLabel.SHORT:
            stop_price = entry * (1.0 + config.stop_loss)
            if nxt.high >= stop_price:
                gross, exit_price, reason = -config.stop_loss, stop_price, "stop_loss"
            else:
                gross, exit_price, reason = 1.0 - nxt.close / entry, nxt.close, "bar_close"
            side = "short"
        else:
            timestamps.append(nxt.open_time)
            values.append(equity)
            continue
        net = gross - 2.0 * config.commission
        equity *= 1.0 + net
        trades.append(Trade(entry_index=t, entry_time=series[t].open_time, side=side,
                            entry_price=entry, exit_price=exit_price,
                            exit_reason=reason, net_return=net))
        timestamps.append(nxt.open_time)
        values.append(equity)
    return EquityCurve(np.array(timestamps, dtype=np.int64), np.array(values)), trades


def buy_and_hold(series: CandleSeries, start_index: int, n_bars: int,
                 initial_equity: float = 1.0) -> EquityCurve:
    """Passive benchmark: equity tracks close[t]/close[start], no fees."""
    if n_bars <= 0:
        raise AlignmentError("buy-and-hold needs a non-empty bar range")
    if start_index < 0 or start_index + n_bars > len(series) - 1:
        raise AlignmentError(f"range [{start_index}, {start_index + n_bars}] outside "
                             f"series of {len(series)}")
    first_close = series[start_index].close
    timestamps = np.array([series[start_index + i].open_time for i in range(n_bars + 1)],
                          dtype=np.int64)
    values = np.array([initial_equity * series[start_index + i].close / first_close
                       for i in range(n_bars + 1)])
    return EquityCurve(timestamps, values)


TRADES_CSV_HEADER = ("entry_index", "entry_time_ms", "side", "entry_price",
                     "exit_price", "exit_reason", "net_return")


def write_trades_csv(trades: Sequence[Trade], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRADES_CSV_HEADER)
        for t in trades:
            writer.writerow([t.entry_index, t.entry_time, t.side, repr(t.entry_price),
                             repr(t.exit_price), t.exit_reason, repr(t.net_return)])


EQUITY_CSV_HEADER = ("timestamp_ms", "strategy_equity", "buy_and_hold_equity")


def write_equity_csv(strategy: EquityCurve, benchmark: EquityCurve, path) -> None:
    if not np.array_equal(strategy.timestamps, benchmark.timestamps):
        raise AlignmentError("strategy and benchmark curves cover different bars")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EQUITY_CSV_HEADER)
        for ts, a, b in zip(strategy.timestamps, strategy.values, benchmark.values):
            writer.writerow([int(ts), repr(float(a)), repr(float(b))])
