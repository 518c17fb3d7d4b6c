"""Per-bar feature vectors from OHLCV candles.

Five indicator families make up a 69-value row:

    [BOP, EBSW, CMF, 60 x DIFF (5 fields x K=1..12), 6 x INTRA]

All of them are ratios or normalized oscillators, so rows are invariant
under a positive rescaling of prices (and DIFF under volume rescaling)
and need no further normalization before modeling or distance ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, WarmupError
from .market_data import Candle, CandleSeries

CMF_PERIOD = 20
EBSW_LENGTH = 40   # high-pass cutoff, in bars
EBSW_BARS = 10     # SuperSmoother cutoff, in bars
DIFF_MAX_K = 12
DIFF_FIELDS = ("open", "high", "low", "close", "volume")

# Denominator clamp for DIFF when the lagged volume is zero.
DIFF_EPSILON = 1e-12

INTRA_NAMES = ("intra_high_low", "intra_high_open", "intra_low_open",
               "intra_close_open", "intra_high_close", "intra_low_close")


def feature_names(max_k: int = DIFF_MAX_K) -> tuple[str, ...]:
    """Stable column order shared by every feature row in a run."""
    names = ["bop", "ebsw", "cmf"]
    names += [f"diff_{field}_{k}" for field in DIFF_FIELDS for k in range(1, max_k + 1)]
    names += list(INTRA_NAMES)
    return tuple(names)


FEATURE_COUNT = len(feature_names())  # 69


@dataclass(frozen=True)
class FeatureVector:
    timestamp: int
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise FormatError(f"{len(self.values)} values for {len(self.names)} names")
        if not np.all(np.isfinite(self.values)):
            raise FormatError(f"non-finite feature value at {self.timestamp}")


class FeatureMatrix:
    """Feature rows aligned to a candle-series suffix (warmup bars dropped)."""

    def __init__(self, timestamps: np.ndarray, values: np.ndarray,
                 names: tuple[str, ...], warmup: int = 0):
        timestamps = np.asarray(timestamps, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != len(timestamps):
            raise FormatError("values must be one row per timestamp")
        if values.shape[1] != len(names):
            raise FormatError(f"{values.shape[1]} columns for {len(names)} names")
        if len(timestamps) > 1 and not np.all(np.diff(timestamps) > 0):
            raise FormatError("row timestamps must be strictly increasing")
        if not np.all(np.isfinite(values)):
            bad = int(np.argwhere(~np.isfinite(values))[0][0])
            raise FormatError(f"non-finite value in row at {int(timestamps[bad])}")
        self.timestamps = timestamps
        self.values = values
        self.names = tuple(names)
        self.warmup = warmup
        self._ts_index = {int(t): i for i, t in enumerate(timestamps)}

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(int(self.timestamps[i]), self.values[i], self.names)

    def row_index(self, timestamp: int) -> int:
        try:
            return self._ts_index[int(timestamp)]
        except KeyError:
            raise KeyError(f"no feature row at timestamp {timestamp}") from None


def bop(series: CandleSeries, t: int) -> float:
    """Balance of power: (close - open) / (high - low), 0 on a flat bar."""
    c = series[t]
    spread = c.high - c.low
    if spread == 0:
        return 0.0
    return (c.close - c.open) / spread


def cmf(series: CandleSeries, t: int, period: int = CMF_PERIOD) -> float:
    """Chaikin money flow over the trailing ``period`` bars ending at t."""
    if t < period - 1:
        raise WarmupError(f"cmf needs {period} bars, index {t} has {t + 1}")
    mfv_sum = 0.0
    vol_sum = 0.0
    for i in range(t - period + 1, t + 1):
        c = series[i]
        spread = c.high - c.low
        if spread > 0:
            mfv_sum += c.volume * ((c.close - c.low) - (c.high - c.close)) / spread
        vol_sum += c.volume
    if vol_sum == 0:
        return 0.0
    return mfv_sum / vol_sum


def ebsw(series: CandleSeries, t: int, length: int = EBSW_LENGTH,
         bars: int = EBSW_BARS) -> float:
    """Even better sinewave at index t; first valid index is ``length``.

    High-pass filters closes at the ``length``-bar period, smooths with a
    SuperSmoother at the ``bars``-bar period, then normalizes a 3-bar wave
    average by the root of the 3-bar mean power, bounding output to [-1, 1].
    """
    if t < length:
        raise WarmupError(f"ebsw needs {length + 1} bars, index {t} has {t + 1}")
    return float(_ebsw_series(series.field("close")[:t + 1], length, bars)[t])


def _ebsw_series(closes: np.ndarray, length: int, bars: int) -> np.ndarray:
    """Full-series EBSW recurrence; entries before index ``length`` are NaN."""
    n = len(closes)
    out = np.full(n, np.nan)
    if n < 2:
        return out
    hp_angle = 2.0 * math.pi / length
    alpha1 = (1.0 - math.sin(hp_angle)) / math.cos(hp_angle)
    a1 = math.exp(-math.sqrt(2.0) * math.pi / bars)
    b1 = 2.0 * a1 * math.cos(math.sqrt(2.0) * math.pi / bars)
    c2, c3 = b1, -a1 * a1
    c1 = 1.0 - c2 - c3

    hp_prev = 0.0
    filt_prev = 0.0
    filt_prev2 = 0.0
    for i in range(1, n):
        hp = 0.5 * (1.0 + alpha1) * (closes[i] - closes[i - 1]) + alpha1 * hp_prev
        filt = 0.5 * c1 * (hp + hp_prev) + c2 * filt_prev + c3 * filt_prev2
        wave = (filt + filt_prev + filt_prev2) / 3.0
        power = (filt * filt + filt_prev * filt_prev + filt_prev2 * filt_prev2) / 3.0
        if i >= length:
            out[i] = 0.0 if power <= 0.0 else min(1.0, max(-1.0, wave / math.sqrt(power)))
        hp_prev = hp
        filt_prev2 = filt_prev
        filt_prev = filt
    return out


def diff_features(series: CandleSeries, t: int, max_k: int = DIFF_MAX_K) -> np.ndarray:
    """Lag ratios field[t]/field[t-K] for the 5 fields and K = 1..max_k."""
    if t < max_k:
        raise WarmupError(f"diff needs {max_k} bars of history, index {t} has {t}")
    out = np.empty(len(DIFF_FIELDS) * max_k)
    pos = 0
    for field in DIFF_FIELDS:
        column = series.field(field)
        for k in range(1, max_k + 1):
            denominator = max(column[t - k], DIFF_EPSILON)
            out[pos] = column[t] / denominator
            pos += 1
    return out


def intra_features(candle: Candle) -> np.ndarray:
    """Same-bar price ratios: h/l, h/o, l/o, c/o, h/c, l/c."""
    o, h, l, c = candle.open, candle.high, candle.low, candle.close
    return np.array([h / l, h / o, l / o, c / o, h / c, l / c])


def assemble_features(series: CandleSeries, cmf_period: int = CMF_PERIOD,
                      ebsw_length: int = EBSW_LENGTH, ebsw_bars: int = EBSW_BARS,
                      max_k: int = DIFF_MAX_K) -> FeatureMatrix:
    """One 69-value row per bar after warmup.

    Warmup is max(ebsw_length, cmf_period - 1, max_k) leading bars; those
    rows are dropped rather than padded so every emitted value is defined.
    """
    warmup = max(ebsw_length, cmf_period - 1, max_k)
    n = len(series)
    if n <= warmup:
        raise WarmupError(f"series of {n} bars is within the {warmup}-bar warmup")

    opens = series.field("open")
    highs = series.field("high")
    lows = series.field("low")
    closes = series.field("close")
    volumes = series.field("volume")

    spread = highs - lows
    with np.errstate(divide="ignore", invalid="ignore"):
        bop_all = np.where(spread > 0, (closes - opens) / spread, 0.0)
        multiplier = np.where(spread > 0, ((closes - lows) - (highs - closes)) / spread, 0.0)
    mfv = multiplier * volumes
    mfv_run = np.concatenate([[0.0], np.cumsum(mfv)])
    vol_run = np.concatenate([[0.0], np.cumsum(volumes)])
    mfv_win = mfv_run[cmf_period:] - mfv_run[:-cmf_period]
    vol_win = vol_run[cmf_period:] - vol_run[:-cmf_period]
    cmf_tail = np.where(vol_win > 0, mfv_win / np.where(vol_win > 0, vol_win, 1.0), 0.0)
    cmf_all = np.concatenate([np.full(cmf_period - 1, np.nan), cmf_tail])

    ebsw_all = _ebsw_series(closes, ebsw_length, ebsw_bars)

    columns = {"open": opens, "high": highs, "low": lows, "close": closes,
               "volume": volumes}
    diff_cols = []
    for field in DIFF_FIELDS:
        col = columns[field]
        for k in range(1, max_k + 1):
            lagged = np.maximum(col[warmup - k:n - k], DIFF_EPSILON)
            diff_cols.append(col[warmup:] / lagged)

    with np.errstate(divide="ignore"):
        intra_cols = [highs / lows, highs / opens, lows / opens,
                      closes / opens, highs / closes, lows / closes]

    rows = np.column_stack(
        [bop_all[warmup:], ebsw_all[warmup:], cmf_all[warmup:]]
        + diff_cols
        + [col[warmup:] for col in intra_cols])
    return FeatureMatrix(series.field("open_time")[warmup:], rows,
                         feature_names(max_k), warmup=warmup)


def write_features_csv(matrix: FeatureMatrix, path) -> None:
    """timestamp_ms + named columns; floats round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp_ms," + ",".join(matrix.names) + "\n")
        for ts, row in zip(matrix.timestamps, matrix.values):
            fh.write(f"{int(ts)}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_features_csv(path) -> FeatureMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if not header or header[0] != "timestamp_ms":
            raise FormatError("feature csv must start with a timestamp_ms column")
        names = tuple(header[1:])
        timestamps = []
        rows = []
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(names) + 1:
                raise FormatError(f"line {line_no}: expected {len(names) + 1} fields, "
                                  f"got {len(parts)}")
            timestamps.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    values = np.array(rows) if rows else np.empty((0, len(names)))
    return FeatureMatrix(np.array(timestamps, dtype=np.int64), values, names)
