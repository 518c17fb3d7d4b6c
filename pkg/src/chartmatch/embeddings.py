"""Fixed-dimension vectors for chart windows and news, plus their fusion.

Chart vectors for ranking can come from two places: an external encoder
(imported through the shared file format) or the built-in baseline embedder,
which standardizes a window of feature rows by candidate-pool statistics and
pushes it through a seeded Gaussian random projection. The baseline keeps
the whole retrieval pipeline runnable without any neural dependency.

File format, one file per store:

    dim=<N> kind=<chart|news_raw|news_reduced>
    <timestamp_ms>,<v1>,...,<vN>
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, InsufficientDataError, WarmupError
from .indicators import FeatureMatrix

CHART_DIM = 128
NEWS_RAW_DIM = 768
NEWS_REDUCED_DIM = 128

KIND_DIMS = {
    "chart": CHART_DIM,
    "news_raw": NEWS_RAW_DIM,
    "news_reduced": NEWS_REDUCED_DIM,
    "multimodal": CHART_DIM,
}

FILE_KINDS = ("chart", "news_raw", "news_reduced")


@dataclass(frozen=True)
class EmbeddingVector:
    """A vector stamped with the open time of its window's final bar."""

    timestamp: int
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FormatError(f"non-finite embedding value at {self.timestamp}")

    @property
    def dim(self) -> int:
        return len(self.values)


class EmbeddingStore:
    """Immutable timestamp-keyed vectors of one kind and uniform dimension."""

    def __init__(self, kind: str, entries: dict[int, np.ndarray]):
        if kind not in KIND_DIMS:
            raise FormatError(f"unknown embedding kind {kind!r}")
        self.kind = kind
        self.dim = KIND_DIMS[kind]
        cleaned: dict[int, np.ndarray] = {}
        for ts, values in entries.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (self.dim,):
                raise FormatError(
                    f"{kind} store expects dim {self.dim}, entry at {ts} has {values.shape}")
            if not np.all(np.isfinite(values)):
                raise FormatError(f"non-finite embedding at {ts}")
            cleaned[int(ts)] = values
        self._entries = cleaned
        self._order = np.array(sorted(cleaned), dtype=np.int64)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, timestamp: int) -> bool:
        return int(timestamp) in self._entries

    @property
    def timestamps(self) -> np.ndarray:
        return self._order

    def get(self, timestamp: int) -> EmbeddingVector:
        try:
            return EmbeddingVector(int(timestamp), self._entries[int(timestamp)])
        except KeyError:
            raise KeyError(f"no {self.kind} embedding at {timestamp}") from None

    def values_at(self, timestamps) -> np.ndarray:
        """Matrix of rows for the given timestamps, in the given order."""
        return np.stack([self._entries[int(t)] for t in timestamps])

    def window_mean(self, start_exclusive: int, end_inclusive: int) -> np.ndarray | None:
        """Mean of vectors with timestamp in (start, end]; None when empty."""
        lo = np.searchsorted(self._order, start_exclusive, side="right")
        hi = np.searchsorted(self._order, end_inclusive, side="right")
        if hi <= lo:
            return None
        return self.values_at(self._order[lo:hi]).mean(axis=0)


@dataclass(frozen=True)
class WindowSpec:
    """Number of consecutive bars that form one chart window."""

    l: int = 6

    def __post_init__(self):
        if self.l < 2:
            raise ValueError("window length must be at least 2 bars")


def load_embeddings(source) -> EmbeddingStore:
    """Parse the shared embedding file format into a store."""
    text = _as_text(source)
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty embedding file, header required")
    header = _parse_header(lines[0])
    kind, dim = header["kind"], header["dim"]
    if kind not in FILE_KINDS:
        raise FormatError(f"unknown embedding kind {kind!r} in header")
    if dim != KIND_DIMS[kind]:
        raise FormatError(f"kind {kind} requires dim {KIND_DIMS[kind]}, header says {dim}")
    entries: dict[int, np.ndarray] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise FormatError(f"line {line_no}: expected {dim} values, got {len(parts) - 1}")
        try:
            ts = int(parts[0])
            values = np.array([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"line {line_no}: {exc}") from exc
        if ts in entries:
            raise FormatError(f"line {line_no}: duplicate timestamp {ts}")
        entries[ts] = values
    return EmbeddingStore(kind, entries)


def save_embeddings(store: EmbeddingStore, path) -> None:
    if store.kind not in FILE_KINDS:
        raise FormatError(f"kind {store.kind!r} is not a file kind {FILE_KINDS}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={store.dim} kind={store.kind}\n")
        for ts in store.timestamps:
            vec = store.get(int(ts))
            fh.write(f"{int(ts)}," + ",".join(repr(float(v)) for v in vec.values) + "\n")


def _parse_header(line: str) -> dict:
    tokens = line.split()
    fields = {}
    for token in tokens:
        if "=" not in token:
            raise FormatError(f"bad header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    if "dim" not in fields or "kind" not in fields:
        raise FormatError("header must declare dim=<N> kind=<kind>")
    try:
        dim = int(fields["dim"])
    except ValueError:
        raise FormatError(f"bad dim {fields['dim']!r}") from None
    if dim <= 0:
        raise FormatError(f"bad dim {dim}")
    return {"dim": dim, "kind": fields["kind"]}


def _as_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        # Valid store content must open with the dim= header token; any
        # other string is a file path.
        if source.lstrip().startswith("dim="):
            return source
        with open(source, "r", encoding="utf-8") as fh:
            return fh.read()
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    with open(source, "r", encoding="utf-8") as fh:
        return fh.read()


def feature_stats(matrix: FeatureMatrix, row_indices) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean/std over the given rows; zero stds become 1."""
    rows = matrix.values[np.asarray(row_indices, dtype=np.int64)]
    if len(rows) == 0:
        raise InsufficientDataError("no rows to compute feature statistics from")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


class BaselineChartEmbedder:
    """Deterministic stand-in chart encoder: standardize, project, normalize.

    Identical windows map to identical unit vectors; the projection matrix is
    a pure function of (seed, window length, feature width, output dim), and
    the standardization statistics must come from the candidate pool only.
    """

    def __init__(self, pool_mean: np.ndarray, pool_std: np.ndarray,
                 spec: WindowSpec = WindowSpec(), seed: int = 0,
                 out_dim: int = CHART_DIM):
        self.pool_mean = np.asarray(pool_mean, dtype=np.float64)
        self.pool_std = np.asarray(pool_std, dtype=np.float64)
        self.spec = spec
        self.seed = seed
        self.out_dim = out_dim
        in_dim = spec.l * len(self.pool_mean)
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((in_dim, out_dim)) / math.sqrt(out_dim)

    def embed(self, matrix: FeatureMatrix, t: int) -> EmbeddingVector:
        """Vector for the window of rows [t - l + 1, t] of the matrix."""
        l = self.spec.l
        if t < l - 1:
            raise WarmupError(f"window of {l} rows needs row index >= {l - 1}, got {t}")
        window = matrix.values[t - l + 1:t + 1]
        standardized = (window - self.pool_mean) / self.pool_std
        flat = standardized.reshape(-1)
        projected = flat @ self.projection
        norm = np.linalg.norm(projected)
        if norm > 0:
            projected = projected / norm
        return EmbeddingVector(int(matrix.timestamps[t]), projected)

    def embed_rows(self, matrix: FeatureMatrix, row_indices) -> EmbeddingStore:
        entries = {}
        for t in row_indices:
            vec = self.embed(matrix, int(t))
            entries[vec.timestamp] = vec.values
        return EmbeddingStore("chart", entries)


def baseline_chart_embedding(matrix: FeatureMatrix, t: int, spec: WindowSpec,
                             seed: int, pool_mean: np.ndarray,
                             pool_std: np.ndarray) -> EmbeddingVector:
    return BaselineChartEmbedder(pool_mean, pool_std, spec, seed).embed(matrix, t)


class LinearReducer:
    """Principal-component projection from news_raw (768) to 128 dims."""

    def __init__(self, mean: np.ndarray, components: np.ndarray):
        self.mean = mean
        self.components = components  # (out_dim, in_dim), orthonormal rows

    @property
    def in_dim(self) -> int:
        return self.components.shape[1]

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]

    def transform(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.in_dim:
            raise DimensionError(f"reducer expects dim {self.in_dim}, got {values.shape[-1]}")
        return (values - self.mean) @ self.components.T

    def reduce_store(self, store: EmbeddingStore) -> EmbeddingStore:
        entries = {int(ts): self.transform(store.get(int(ts)).values)
                   for ts in store.timestamps}
        return EmbeddingStore("news_reduced", entries)


def fit_linear_reducer(store: EmbeddingStore, out_dim: int = NEWS_REDUCED_DIM) -> LinearReducer:
    """Fit the top principal components of the store's vectors.

    Requires at least ``out_dim`` vectors. Component signs are fixed so the
    coordinate of largest magnitude is positive, making refits repeatable.
    """
    n = len(store)
    if n < out_dim:
        raise InsufficientDataError(f"need at least {out_dim} vectors, have {n}")
    data = store.values_at(store.timestamps)
    mean = data.mean(axis=0)
    centered = data - mean
    covariance = centered.T @ centered / n
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    top = eigenvectors[:, np.argsort(eigenvalues)[::-1][:out_dim]].T
    for row in top:
        anchor = np.argmax(np.abs(row))
        if row[anchor] < 0:
            row *= -1.0
    return LinearReducer(mean, top)


def mean_news_embedding(store: EmbeddingStore, window_start: int,
                        window_end: int) -> EmbeddingVector | None:
    """Average of news vectors released in (window_start, window_end]."""
    mean = store.window_mean(window_start, window_end)
    if mean is None:
        return None
    return EmbeddingVector(int(window_end), mean)


def combine_multimodal(chart: EmbeddingVector,
                       news_reduced: EmbeddingVector | None) -> EmbeddingVector:
    """Element-wise sum; a missing news vector contributes zero."""
    if news_reduced is None:
        return EmbeddingVector(chart.timestamp, chart.values.copy())
    if chart.dim != news_reduced.dim:
        raise DimensionError(f"chart dim {chart.dim} != news dim {news_reduced.dim}")
    return EmbeddingVector(chart.timestamp, chart.values + news_reduced.values)


def cosine_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """1 - cosine similarity, clipped to [0, 2]; zero-norm vectors score 1."""
    if a.dim != b.dim:
        raise DimensionError(f"dim mismatch: {a.dim} != {b.dim}")
    denominator = np.linalg.norm(a.values) * np.linalg.norm(b.values)
    if denominator == 0:
        return 1.0
    similarity = float(np.dot(a.values, b.values) / denominator)
    return min(2.0, max(0.0, 1.0 - similarity))


def cosine_distances(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row-wise cosine_distance of a matrix against one query vector."""
    query_norm = np.linalg.norm(query)
    row_norms = np.linalg.norm(matrix, axis=1)
    denominator = row_norms * query_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        similarity = np.where(denominator > 0, (matrix @ query) / denominator, 0.0)
    return np.clip(1.0 - similarity, 0.0, 2.0)
