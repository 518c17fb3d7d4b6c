import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartmatch.backtest import (BacktestConfig, buy_and_hold, simulate,
                                 write_equity_csv, write_trades_csv)
from chartmatch.errors import AlignmentError, ConfigError
from chartmatch.market_data import INTERVAL_4H_MS, Candle, CandleSeries, DirectionLabel
from conftest import BASE_TS

H4 = INTERVAL_4H_MS
LONG, SHORT, HOLD = DirectionLabel.LONG, DirectionLabel.SHORT, DirectionLabel.HOLD


def series_of(bars):
    """bars: (open, high, low, close) tuples, volume fixed."""
    return CandleSeries([Candle(BASE_TS + i * H4, o, h, l, c, 10.0)
                         for i, (o, h, l, c) in enumerate(bars)])


def two_bar(close_t, high_next, low_next, close_next):
    return series_of([
        (close_t, close_t * 1.001, close_t * 0.999, close_t),
        (close_t, max(high_next, close_t), min(low_next, close_t), close_next),
    ])


class TestScriptedScenarios:
    def test_long_stop_hit(self):
        # Stop sits at 99.25; the bar's low of 99.0 breaches it.
        series = two_bar(100.0, 101.0, 99.0, 101.0)
        config = BacktestConfig()
        curve, trades = simulate(series, [LONG], 0, config)
        expected_net = -(config.stop_loss + 2.0 * config.commission)
        assert trades[0].net_return == expected_net
        assert trades[0].net_return == pytest.approx(-0.0083, abs=1e-12)
        assert trades[0].exit_reason == "stop_loss"
        assert trades[0].exit_price == 100.0 * (1.0 - config.stop_loss)
        assert curve.final == 1.0 + expected_net

    def test_long_clean_exit(self):
        # Low of 99.5 stays above the 99.25 stop; exit at the 101 close.
        series = two_bar(100.0, 101.0, 99.5, 101.0)
        config = BacktestConfig()
        curve, trades = simulate(series, [LONG], 0, config)
        expected_net = (101.0 / 100.0 - 1.0) - 2.0 * config.commission
        assert trades[0].net_return == expected_net
        assert trades[0].net_return == pytest.approx(0.0092, abs=1e-12)
        assert trades[0].exit_reason == "bar_close"
        assert curve.final == 1.0 + expected_net

    def test_short_stop_hit(self):
        series = two_bar(100.0, 101.0, 99.0, 99.0)  # high 101 >= 100.75 stop
        config = BacktestConfig()
        _, trades = simulate(series, [SHORT], 0, config)
        assert trades[0].net_return == -(config.stop_loss + 2.0 * config.commission)
        assert trades[0].exit_reason == "stop_loss"

    def test_short_clean_exit(self):
        series = two_bar(100.0, 100.5, 98.9, 99.0)  # high below the 100.75 stop
        config = BacktestConfig()
        _, trades = simulate(series, [SHORT], 0, config)
        assert trades[0].net_return == (1.0 - 99.0 / 100.0) - 2.0 * config.commission

    def test_stop_checked_before_favorable_close(self):
        # Both the stop and a big favorable close happen in bar t+1; the
        # conservative rule books the stop.
        series = two_bar(100.0, 106.0, 99.0, 105.0)
        config = BacktestConfig()
        _, trades = simulate(series, [LONG], 0, config)
        assert trades[0].exit_reason == "stop_loss"
        assert trades[0].net_return == -(config.stop_loss + 2.0 * config.commission)

    def test_all_hold_is_flat(self):
        series = series_of([(100, 106, 99, 100 + i) for i in range(6)])
        curve, trades = simulate(series, [HOLD] * 5, 0, BacktestConfig())
        assert trades == []
        assert np.array_equal(curve.values, np.ones(6))

    def test_worst_case_loss_is_exact_for_every_stop(self):
        rng = np.random.default_rng(0)
        bars = [(100.0, 100.1, 99.9, 100.0)]
        price = 100.0
        for _ in range(60):
            close = price * float(1 + rng.normal(0, 0.02))
            high = max(price, close) * 1.001
            low = min(price, close) * 0.999
            bars.append((price, high, low, close))
            price = close
        series = series_of(bars)
        config = BacktestConfig()
        _, trades = simulate(series, [LONG, SHORT] * 30, 0, config)
        stop_trades = [t for t in trades if t.exit_reason == "stop_loss"]
        assert stop_trades  # the walk above is volatile enough to hit stops
        for trade in stop_trades:
            assert trade.net_return == -(config.stop_loss + 2.0 * config.commission)


class TestEquityProperties:
    @staticmethod
    def gentle_uptrend(n):
        bars = []
        price = 100.0
        for _ in range(n):
            close = price * 1.002
            bars.append((price, close * 1.0005, price * 0.999, close))
            price = close
        return series_of(bars)

    def test_zero_commission_long_every_bar_equals_buy_and_hold(self):
        series = self.gentle_uptrend(50)
        config = BacktestConfig(commission=0.0)
        curve, trades = simulate(series, [LONG] * 49, 0, config)
        benchmark = buy_and_hold(series, 0, 49)
        assert all(t.exit_reason == "bar_close" for t in trades)
        assert curve.values == pytest.approx(benchmark.values, abs=1e-12)

    def test_price_scale_invariance(self):
        series = self.gentle_uptrend(30)
        scaled = CandleSeries([Candle(c.open_time, c.open * 7, c.high * 7, c.low * 7,
                                      c.close * 7, c.volume) for c in series])
        predictions = [LONG, SHORT, HOLD] * 9
        a, _ = simulate(series, predictions, 0, BacktestConfig())
        b, _ = simulate(scaled, predictions, 0, BacktestConfig())
        assert b.values == pytest.approx(a.values, rel=1e-12)

    def test_curve_length_and_timestamps(self):
        series = self.gentle_uptrend(20)
        curve, _ = simulate(series, [LONG] * 10, 3, BacktestConfig())
        assert len(curve.values) == 11
        assert curve.timestamps[0] == series[3].open_time
        assert curve.timestamps[-1] == series[13].open_time

    def test_equity_strictly_positive(self):
        series = self.gentle_uptrend(40)
        curve, _ = simulate(series, [SHORT] * 39, 0, BacktestConfig())
        assert (curve.values > 0).all()

    @given(labels=st.lists(st.sampled_from([LONG, SHORT, HOLD]), min_size=1, max_size=30),
           seed=st.integers(0, 50))
    @settings(max_examples=120, deadline=None)
    def test_any_prediction_stream_keeps_equity_positive_and_bounded(self, labels, seed):
        rng = np.random.default_rng(seed)
        bars = []
        price = 100.0
        for _ in range(len(labels) + 1):
            close = price * float(np.exp(rng.normal(0, 0.03)))
            high = max(price, close) * float(1 + abs(rng.normal(0, 0.01)))
            low = min(price, close) * float(1 - abs(rng.normal(0, 0.01)))
            bars.append((price, high, low, close))
            price = close
        series = series_of(bars)
        config = BacktestConfig()
        curve, trades = simulate(series, labels, 0, config)
        assert (curve.values > 0).all()
        assert len(curve.values) == len(labels) + 1
        # the stop is the worst possible outcome: stop exits land on it
        # exactly, clean exits always beat it
        worst = -(config.stop_loss + 2 * config.commission)
        for trade in trades:
            if trade.exit_reason == "stop_loss":
                assert trade.net_return == worst
            else:
                assert trade.net_return > worst


class TestBuyAndHold:
    def test_constant_closes_flat(self):
        series = series_of([(100, 101, 99, 100)] * 10)
        curve = buy_and_hold(series, 0, 9)
        assert np.array_equal(curve.values, np.ones(10))

    def test_doubling_close(self):
        series = series_of([(100, 205, 99, 100), (100, 205, 99, 200),
                            (200, 205, 99, 200)])
        curve = buy_and_hold(series, 0, 2)
        assert curve.final == 2.0

    def test_curve_is_scalar_multiple_of_closes(self):
        series = TestEquityProperties.gentle_uptrend(25)
        curve = buy_and_hold(series, 2, 20, initial_equity=5.0)
        closes = np.array([series[2 + i].close for i in range(21)])
        assert curve.values == pytest.approx(5.0 * closes / closes[0], rel=1e-12)

    def test_empty_range(self):
        series = series_of([(100, 101, 99, 100)] * 5)
        with pytest.raises(AlignmentError):
            buy_and_hold(series, 0, 0)


class TestValidation:
    def test_misalignment(self):
        series = series_of([(100, 101, 99, 100)] * 5)
        with pytest.raises(AlignmentError):
            simulate(series, [LONG] * 5, 0, BacktestConfig())  # bar 5 needs bar 6

    def test_take_profit_rejected(self):
        with pytest.raises(ConfigError, match="take profit"):
            BacktestConfig(take_profit=0.01)

    def test_stop_loss_bounds(self):
        with pytest.raises(ConfigError):
            BacktestConfig(stop_loss=0.0)
        with pytest.raises(ConfigError):
            BacktestConfig(stop_loss=1.5)


class TestCsvOutputs:
    def test_round_trippable_files(self, tmp_path):
        series = TestEquityProperties.gentle_uptrend(20)
        config = BacktestConfig()
        curve, trades = simulate(series, [LONG, HOLD, SHORT] * 5, 0, config)
        benchmark = buy_and_hold(series, 0, 15)
        trades_path = tmp_path / "trades.csv"
        equity_path = tmp_path / "equity.csv"
        write_trades_csv(trades, trades_path)
        write_equity_csv(curve, benchmark, equity_path)
        trade_lines = trades_path.read_text().strip().split("\n")
        assert trade_lines[0] == "entry_index,entry_time_ms,side,entry_price,exit_price,exit_reason,net_return"
        assert len(trade_lines) == 1 + len(trades)
        equity_lines = equity_path.read_text().strip().split("\n")
        assert len(equity_lines) == 1 + len(curve.values)
        last = equity_lines[-1].split(",")
        assert float(last[1]) == curve.final

    def test_mismatched_curves_rejected(self, tmp_path):
        series = TestEquityProperties.gentle_uptrend(20)
        curve, _ = simulate(series, [LONG] * 5, 0, BacktestConfig())
        benchmark = buy_and_hold(series, 1, 5)
        with pytest.raises(AlignmentError):
            write_equity_csv(curve, benchmark, tmp_path / "x.csv")
