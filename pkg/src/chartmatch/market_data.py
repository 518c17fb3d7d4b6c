"""4-hour OHLCV candles: ingestion, validation and direction labeling.

A bar earns one of three direction labels from the excursions of the *next*
bar relative to the current close:

    up move    u = (high[t+1] - close[t]) / close[t]
    down move  v = (low[t+1]  - close[t]) / close[t]

LONG when u clears the move threshold (LONG wins when both sides clear it),
SHORT when v clears it on the downside, HOLD otherwise.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, CandleValidationError, ParseError, SeriesError

INTERVAL_4H_MS = 4 * 3600 * 1000

# Minimum fractional next-bar move that makes a bar a long/short rather
# than a hold. 0.75% both ways.
DEFAULT_MOVE_THRESHOLD = 0.0075

CSV_COLUMNS = ("open_time_ms", "open", "high", "low", "close", "volume")

GAP_POLICIES = ("error", "allow", "ffill")


class DirectionLabel(enum.IntEnum):
    """Three-way direction class; integer values index vote/metric arrays."""

    LONG = 0
    SHORT = 1
    HOLD = 2

    @classmethod
    def from_code(cls, code: int) -> "DirectionLabel":
        return cls(code)


@dataclass(frozen=True)
class Candle:
    """One OHLCV bar. Prices strictly positive, volume non-negative."""

    open_time: int  # epoch ms UTC, bar open
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        for name in ("open", "high", "low", "close", "volume"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise CandleValidationError(f"{name} is not finite", self.open_time)
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise CandleValidationError("prices must be strictly positive", self.open_time)
        if self.volume < 0:
            raise CandleValidationError("volume must be non-negative", self.open_time)
        if self.high < max(self.open, self.close):
            raise CandleValidationError("high below body", self.open_time)
        if self.low > min(self.open, self.close):
            raise CandleValidationError("low above body", self.open_time)
        if self.high < self.low:
            raise CandleValidationError("high below low", self.open_time)


class CandleSeries:
    """Immutable, chronologically ordered candles on a fixed interval.

    By default every consecutive pair of bars must be exactly one interval
    apart. Exchange history contains occasional maintenance holes, so the
    constructor accepts a gap policy:

    - ``"error"``: any hole raises SeriesError naming the missing bar.
    - ``"allow"``: holes are kept; spacing must still be a positive multiple
      of the interval. Row order, not wall-clock time, drives labeling and
      differencing downstream.
    - ``"ffill"``: holes are filled with flat zero-volume bars carried
      forward from the previous close.
    """

    def __init__(self, candles: Iterable[Candle], interval_ms: int = INTERVAL_4H_MS,
                 gap_policy: str = "error"):
        if gap_policy not in GAP_POLICIES:
            raise ValueError(f"unknown gap policy {gap_policy!r}, expected one of {GAP_POLICIES}")
        if interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        ordered = sorted(candles, key=lambda c: c.open_time)
        ordered = self._check_spacing(ordered, interval_ms, gap_policy)
        self._candles: tuple[Candle, ...] = tuple(ordered)
        self.interval_ms = interval_ms
        self._arrays: dict[str, np.ndarray] | None = None

    @staticmethod
    def _check_spacing(ordered: list[Candle], interval_ms: int, gap_policy: str) -> list[Candle]:
        out: list[Candle] = []
        for candle in ordered:
            if not out:
                out.append(candle)
                continue
            prev = out[-1]
            delta = candle.open_time - prev.open_time
            if delta == 0:
                raise SeriesError(f"duplicate timestamp {candle.open_time}")
            if delta == interval_ms:
                out.append(candle)
                continue
            if delta % interval_ms != 0:
                raise SeriesError(
                    f"bar at {candle.open_time} is not on the {interval_ms} ms grid "
                    f"started at {out[0].open_time}")
            if gap_policy == "error":
                raise SeriesError(f"missing bar at {prev.open_time + interval_ms}")
            if gap_policy == "ffill":
                t = prev.open_time + interval_ms
                while t < candle.open_time:
                    out.append(Candle(t, prev.close, prev.close, prev.close, prev.close, 0.0))
                    t += interval_ms
            out.append(candle)
        return out

    def __len__(self) -> int:
        return len(self._candles)

    def __getitem__(self, index: int) -> Candle:
        return self._candles[index]

    def __iter__(self):
        return iter(self._candles)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CandleSeries):
            return NotImplemented
        return self._candles == other._candles and self.interval_ms == other.interval_ms

    @property
    def candles(self) -> tuple[Candle, ...]:
        return self._candles

    @property
    def is_uniform(self) -> bool:
        """True when every consecutive pair is exactly one interval apart."""
        ts = self.field("open_time")
        return len(ts) < 2 or bool((np.diff(ts) == self.interval_ms).all())

    def field(self, name: str) -> np.ndarray:
        """Column view as a numpy array (cached)."""
        if self._arrays is None:
            self._arrays = {
                "open_time": np.array([c.open_time for c in self._candles], dtype=np.int64),
                "open": np.array([c.open for c in self._candles]),
                "high": np.array([c.high for c in self._candles]),
                "low": np.array([c.low for c in self._candles]),
                "close": np.array([c.close for c in self._candles]),
                "volume": np.array([c.volume for c in self._candles]),
            }
        return self._arrays[name]


@dataclass(frozen=True)
class LabeledPoint:
    """Label of bar ``index`` plus the next-bar excursions behind it."""

    index: int
    u: float
    v: float
    label: DirectionLabel


def parse_candles(source, fmt: str = "csv", interval_ms: int = INTERVAL_4H_MS,
                  gap_policy: str = "error") -> CandleSeries:
    """Parse CSV or JSON candle data into a validated series.

    ``source`` may be bytes, text, or a file-like object. Rows need not be
    sorted. Malformed rows raise ParseError with the offending row number;
    invariant violations raise CandleValidationError; spacing problems raise
    SeriesError.
    """
    text = _as_text(source)
    if fmt == "csv":
        candles = _parse_csv(text)
    elif fmt == "json":
        candles = _parse_json(text)
    else:
        raise ValueError(f"unknown format {fmt!r}, expected 'csv' or 'json'")
    return CandleSeries(candles, interval_ms=interval_ms, gap_policy=gap_policy)


def _as_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def _parse_csv(text: str) -> list[Candle]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, header required") from None
    header = [h.strip() for h in header]
    if header != list(CSV_COLUMNS):
        raise ParseError(f"expected header {','.join(CSV_COLUMNS)}, got {','.join(header)}", row=1)
    candles = []
    for row_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 6:
            raise ParseError(f"expected 6 fields, got {len(row)}", row=row_no)
        try:
            candles.append(Candle(int(row[0]), float(row[1]), float(row[2]),
                                  float(row[3]), float(row[4]), float(row[5])))
        except (ValueError, TypeError) as exc:
            raise ParseError(str(exc), row=row_no) from exc
    return candles


def _parse_json(text: str) -> list[Candle]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise ParseError("expected a JSON array of candle objects")
    candles = []
    for row_no, entry in enumerate(payload, start=1):
        if not isinstance(entry, dict):
            raise ParseError("expected an object", row=row_no)
        missing = [k for k in CSV_COLUMNS if k not in entry]
        if missing:
            raise ParseError(f"missing keys: {', '.join(missing)}", row=row_no)
        try:
            candles.append(Candle(int(entry["open_time_ms"]), float(entry["open"]),
                                  float(entry["high"]), float(entry["low"]),
                                  float(entry["close"]), float(entry["volume"])))
        except (ValueError, TypeError) as exc:
            raise ParseError(str(exc), row=row_no) from exc
    return candles


def write_candles(series: CandleSeries, fmt: str = "csv") -> str:
    """Serialize a series so that parse_candles round-trips it exactly."""
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for c in series:
            writer.writerow([c.open_time, repr(c.open), repr(c.high),
                             repr(c.low), repr(c.close), repr(c.volume)])
        return out.getvalue()
    if fmt == "json":
        rows = [{"open_time_ms": c.open_time, "open": c.open, "high": c.high,
                 "low": c.low, "close": c.close, "volume": c.volume} for c in series]
        return json.dumps(rows)
    raise ValueError(f"unknown format {fmt!r}, expected 'csv' or 'json'")


def compute_label(series: CandleSeries, t: int,
                  threshold: float = DEFAULT_MOVE_THRESHOLD) -> LabeledPoint:
    """Label bar t from the excursions of bar t+1.

    LONG takes priority when both thresholds are crossed in the same bar.
    """
    if not 0 <= t < len(series) - 1:
        raise IndexError(f"bar {t} has no next bar (series length {len(series)})")
    close_t = series[t].close
    nxt = series[t + 1]
    u = (nxt.high - close_t) / close_t
    v = (nxt.low - close_t) / close_t
    if u >= threshold:
        label = DirectionLabel.LONG
    elif v <= -threshold:
        label = DirectionLabel.SHORT
    else:
        label = DirectionLabel.HOLD
    return LabeledPoint(index=t, u=u, v=v, label=label)


def label_series(series: CandleSeries,
                 threshold: float = DEFAULT_MOVE_THRESHOLD) -> list[LabeledPoint]:
    """Labels for every bar that has a next bar (all but the last)."""
    return [compute_label(series, t, threshold) for t in range(len(series) - 1)]


def label_distribution(points: Sequence[LabeledPoint]) -> tuple[float, float, float]:
    """Fractions of (LONG, SHORT, HOLD); sums to 1."""
    if not points:
        raise AlignmentError("label distribution of an empty list")
    counts = [0, 0, 0]
    for p in points:
        counts[p.label] += 1
    n = len(points)
    return counts[0] / n, counts[1] / n, counts[2] / n
