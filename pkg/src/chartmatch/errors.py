"""Exception types raised across the package.

Everything inherits from ChartMatchError so callers can catch the package's
failures with a single except clause while still being able to tell apart
data problems (parse/validation), transport problems, and usage problems.
"""


class ChartMatchError(Exception):
    """Base class for all errors raised by chartmatch."""


class ParseError(ChartMatchError):
    """A source file or payload could not be decoded row by row."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class CandleValidationError(ChartMatchError):
    """A single candle violates the OHLCV invariants."""

    def __init__(self, message: str, timestamp: int | None = None):
        self.timestamp = timestamp
        if timestamp is not None:
            message = f"candle at {timestamp}: {message}"
        super().__init__(message)


class SeriesError(ChartMatchError):
    """An assembled candle series violates ordering or spacing rules."""


class TransportError(ChartMatchError):
    """The exchange could not be reached after bounded retries."""


class RemoteError(ChartMatchError):
    """The exchange answered with an error payload."""


class WarmupError(ChartMatchError):
    """Not enough history before the requested index for an indicator."""


class FormatError(ChartMatchError):
    """An embedding/ranking artifact file does not follow its format."""


class DimensionError(ChartMatchError):
    """Vector dimensions do not line up."""


class InsufficientDataError(ChartMatchError):
    """Too few rows/vectors to fit the requested statistic."""


class EmptyPoolError(ChartMatchError):
    """Ranking was asked against an empty candidate pool."""


class CoverageError(ChartMatchError):
    """A pool entry has no embedding/label where one is required."""


class CausalityError(ChartMatchError):
    """A candidate is not strictly earlier than the query it serves."""


class MissingLabelError(ChartMatchError):
    """A retrieved neighbor has no direction label."""


class AlignmentError(ChartMatchError):
    """Two sequences that must be aligned differ in length or keys."""


class TrainingError(ChartMatchError):
    """Degenerate training input (single class, empty matrix, ...)."""


class ShapeError(ChartMatchError):
    """Prediction input width does not match the trained model."""


class SplitError(ChartMatchError):
    """Dataset too small to produce the requested chronological splits."""


class ConfigError(ChartMatchError):
    """Invalid experiment/CLI configuration."""
