"""Rank candidate-pool timesteps against a query under four strategies.

All rankings are exact: brute-force scans over the pool (a few thousand
rows by a hundred-odd dims), with ties broken by older timestamp so results
are reproducible across platforms and insertion orders. Every produced
ranking is causal: each neighbor strictly predates its query.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .embeddings import EmbeddingStore, EmbeddingVector, cosine_distances
from .errors import (CausalityError, CoverageError, DimensionError, EmptyPoolError,
                     FormatError)
from .indicators import FeatureVector

MAX_NEIGHBORS = 30

EUCLIDEAN = "euclidean"
CHART_EMBEDDING = "chart_embedding"
MULTIMODAL = "multimodal"
RANDOM = "random"
RANKING_METHODS = (EUCLIDEAN, CHART_EMBEDDING, MULTIMODAL, RANDOM)
DISTANCE_METHODS = (EUCLIDEAN, CHART_EMBEDDING, MULTIMODAL)


class Neighbor(NamedTuple):
    index: int
    timestamp: int
    score: float


@dataclass(frozen=True)
class Ranking:
    query_index: int
    query_timestamp: int
    method: str
    neighbors: tuple[Neighbor, ...]

    def __post_init__(self):
        if self.method not in RANKING_METHODS:
            raise ValueError(f"unknown ranking method {self.method!r}")
        if len(self.neighbors) > MAX_NEIGHBORS:
            raise ValueError(f"ranking of {len(self.neighbors)} exceeds {MAX_NEIGHBORS}")
        seen = set()
        for n in self.neighbors:
            if n.index in seen:
                raise ValueError(f"duplicate candidate index {n.index}")
            seen.add(n.index)
            if n.timestamp >= self.query_timestamp:
                raise CausalityError(
                    f"candidate at {n.timestamp} not earlier than query at "
                    f"{self.query_timestamp}")
        if self.method in DISTANCE_METHODS:
            scores = [n.score for n in self.neighbors]
            if any(b < a for a, b in zip(scores, scores[1:])):
                raise ValueError("distance scores must be non-decreasing")


@dataclass(frozen=True)
class CandidatePool:
    """Timesteps eligible as neighbors, with the data needed to rank them.

    Entries are canonicalized to timestamp order at construction, so two
    pools built from permutations of the same rows behave identically.
    """

    indices: np.ndarray
    timestamps: np.ndarray
    features: np.ndarray | None = None
    embeddings: EmbeddingStore | None = None
    _embedding_matrix: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if indices.shape != timestamps.shape:
            raise ValueError("indices and timestamps must align")
        if len(np.unique(timestamps)) != len(timestamps):
            raise ValueError("pool timestamps must be unique")
        order = np.argsort(timestamps)
        object.__setattr__(self, "indices", indices[order])
        object.__setattr__(self, "timestamps", timestamps[order])
        if self.features is not None:
            features = np.asarray(self.features, dtype=np.float64)
            if features.ndim != 2 or features.shape[0] != len(indices):
                raise ValueError("features must be one row per pool entry")
            object.__setattr__(self, "features", features[order])

    def __len__(self) -> int:
        return len(self.indices)

    def embedding_matrix(self) -> np.ndarray:
        """Pool embeddings stacked in timestamp order (cached)."""
        if not self._embedding_matrix:
            if self.embeddings is None:
                raise CoverageError("pool has no embedding store")
            missing = [int(t) for t in self.timestamps if int(t) not in self.embeddings]
            if missing:
                raise CoverageError(
                    f"{len(missing)} pool entries lack embeddings, first at {missing[0]}")
            self._embedding_matrix.append(self.embeddings.values_at(self.timestamps))
        return self._embedding_matrix[0]


def _check_pool_and_query(pool: CandidatePool, query_timestamp: int, k: int):
    if not 1 <= k <= MAX_NEIGHBORS:
        raise ValueError(f"k must be in [1, {MAX_NEIGHBORS}], got {k}")
    if len(pool) == 0:
        raise EmptyPoolError("cannot rank against an empty candidate pool")
    latest = int(pool.timestamps[-1])
    if latest >= query_timestamp:
        raise CausalityError(
            f"pool reaches {latest}, not strictly before query at {query_timestamp}")


def _take_top(pool: CandidatePool, scores: np.ndarray, k: int) -> tuple[Neighbor, ...]:
    # lexsort: primary key is the score, ties fall back to older timestamp.
    order = np.lexsort((pool.timestamps, scores))[:k]
    return tuple(Neighbor(int(pool.indices[i]), int(pool.timestamps[i]), float(scores[i]))
                 for i in order)


def rank_euclidean(query: FeatureVector, pool: CandidatePool, k: int = MAX_NEIGHBORS,
                   query_index: int = -1) -> Ranking:
    """The k pool rows closest to the query in L2 distance, ascending."""
    _check_pool_and_query(pool, query.timestamp, k)
    if pool.features is None:
        raise CoverageError("pool has no feature rows for euclidean ranking")
    if pool.features.shape[1] != len(query.values):
        raise DimensionError(f"query width {len(query.values)} != pool width "
                             f"{pool.features.shape[1]}")
    distances = np.sqrt(((pool.features - query.values) ** 2).sum(axis=1))
    return Ranking(query_index, query.timestamp, EUCLIDEAN,
                   _take_top(pool, distances, k))


def rank_by_embedding(query: EmbeddingVector, pool: CandidatePool,
                      method: str = CHART_EMBEDDING, k: int = MAX_NEIGHBORS,
                      query_index: int = -1) -> Ranking:
    """The k pool entries with smallest cosine distance to the query vector.

    Serves both the chart-embedding and multimodal strategies; the caller
    supplies the store that defines the method.
    """
    if method not in (CHART_EMBEDDING, MULTIMODAL):
        raise ValueError(f"embedding ranking method must be one of "
                         f"{(CHART_EMBEDDING, MULTIMODAL)}, got {method!r}")
    _check_pool_and_query(pool, query.timestamp, k)
    matrix = pool.embedding_matrix()
    if matrix.shape[1] != query.dim:
        raise DimensionError(f"query dim {query.dim} != pool dim {matrix.shape[1]}")
    distances = cosine_distances(matrix, query.values)
    return Ranking(query_index, query.timestamp, method, _take_top(pool, distances, k))


def rank_random(query_index: int, query_timestamp: int, pool: CandidatePool,
                k: int = MAX_NEIGHBORS, seed: int = 0) -> Ranking:
    """k distinct pool entries sampled uniformly; score is the sample order.

    Pools smaller than k yield a shorter ranking containing every member.
    """
    _check_pool_and_query(pool, query_timestamp, k)
    take = min(k, len(pool))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool), size=take, replace=False)
    neighbors = tuple(
        Neighbor(int(pool.indices[i]), int(pool.timestamps[i]), float(rank))
        for rank, i in enumerate(chosen, start=1))
    return Ranking(query_index, query_timestamp, RANDOM, neighbors)


RANKING_CSV_HEADER = ("query_timestamp", "method", "rank", "candidate_timestamp", "score")


def write_rankings_csv(rankings: Sequence[Ranking], path) -> None:
    """Cache file so feature-engineering runs can skip re-ranking."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RANKING_CSV_HEADER)
        for ranking in rankings:
            for position, neighbor in enumerate(ranking.neighbors, start=1):
                writer.writerow([ranking.query_timestamp, ranking.method, position,
                                 neighbor.timestamp, repr(neighbor.score)])


def read_rankings_csv(source, index_of: Mapping[int, int]) -> list[Ranking]:
    """Rebuild rankings from the cache; ``index_of`` maps timestamps back to
    timeline indices."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != list(RANKING_CSV_HEADER):
        raise FormatError(f"expected header {','.join(RANKING_CSV_HEADER)}")
    grouped: dict[tuple[int, str], list[Neighbor]] = {}
    order: list[tuple[int, str]] = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"line {row_no}: expected 5 fields, got {len(row)}")
        try:
            query_ts, method = int(row[0]), row[1]
            position, cand_ts, score = int(row[2]), int(row[3]), float(row[4])
        except ValueError as exc:
            raise FormatError(f"line {row_no}: {exc}") from exc
        key = (query_ts, method)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        if position != len(grouped[key]) + 1:
            raise FormatError(f"line {row_no}: rank {position} out of sequence")
        if cand_ts not in index_of:
            raise FormatError(f"line {row_no}: unknown candidate timestamp {cand_ts}")
        grouped[key].append(Neighbor(index_of[cand_ts], cand_ts, score))
    out = []
    for query_ts, method in order:
        if query_ts not in index_of:
            raise FormatError(f"unknown query timestamp {query_ts}")
        out.append(Ranking(index_of[query_ts], query_ts, method,
                           tuple(grouped[(query_ts, method)])))
    return out
