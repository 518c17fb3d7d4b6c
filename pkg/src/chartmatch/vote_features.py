"""Neighbor-label votes, softmax-normalized and appended to feature rows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError, MissingLabelError
from .indicators import FeatureMatrix
from .market_data import DirectionLabel
from .retrieval import Ranking

K_GRID = (5, 10, 15, 20, 25, 30)

VOTE_COLUMNS = ("vote_c0", "vote_c1", "vote_c2")


@dataclass(frozen=True)
class VoteVector:
    """Raw label counts over the first k neighbors of one ranking."""

    k: int
    counts: tuple[int, int, int]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError("vote counts must be non-negative")


@dataclass(frozen=True)
class NormalizedVote:
    probs: tuple[float, float, float]

    def __post_init__(self):
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError(f"vote probabilities sum to {sum(self.probs)}, not 1")
        if any(not 0.0 < p < 1.0 for p in self.probs):
            raise ValueError("vote probabilities must lie in (0, 1)")


def count_votes(ranking: Ranking, labels: Mapping[int, DirectionLabel],
                k: int) -> VoteVector:
    """Count the labels realized at the first min(k, len) neighbors.

    ``labels`` maps candidate timeline index to its direction label.
    """
    if k not in K_GRID:
        raise ValueError(f"k must be one of {K_GRID}, got {k}")
    counts = [0, 0, 0]
    for neighbor in ranking.neighbors[:k]:
        label = labels.get(neighbor.index)
        if label is None:
            raise MissingLabelError(f"neighbor {neighbor.index} "
                                    f"(at {neighbor.timestamp}) has no label")
        counts[label] += 1
    return VoteVector(k=k, counts=tuple(counts))


def softmax_normalize(votes: VoteVector) -> NormalizedVote:
    """Softmax over the raw counts, computed with max-subtraction."""
    counts = np.asarray(votes.counts, dtype=np.float64)
    shifted = counts - counts.max()
    exps = np.exp(shifted)
    probs = exps / exps.sum()
    return NormalizedVote(probs=(float(probs[0]), float(probs[1]), float(probs[2])))


def augment_features(matrix: FeatureMatrix, votes: Sequence[NormalizedVote]) -> FeatureMatrix:
    """Append the three vote columns; original columns are untouched."""
    if len(votes) != len(matrix):
        raise AlignmentError(f"{len(votes)} votes for {len(matrix)} feature rows")
    vote_values = np.array([v.probs for v in votes], dtype=np.float64)
    if len(matrix) == 0:
        vote_values = vote_values.reshape(0, 3)
    return FeatureMatrix(matrix.timestamps, np.hstack([matrix.values, vote_values]),
                         matrix.names + VOTE_COLUMNS, warmup=matrix.warmup)
