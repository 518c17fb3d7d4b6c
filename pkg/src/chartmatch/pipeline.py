"""End-to-end experiment: split, rank, vote, train, evaluate, backtest.

The timeline is split chronologically: the first 80% of bars form the
candidate pool (the only bars retrievable as neighbors), the remaining 20%
split 8:1:1 into train/validation/test. Every fitted statistic (pool
feature means/stds, the news reducer, class weights) derives from the
candidate pool or the train split only; evaluation rows never touch them.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import gbt
from .backtest import BacktestConfig, EquityCurve, Trade, buy_and_hold, simulate
from .embeddings import (BaselineChartEmbedder, EmbeddingStore, LinearReducer,
                         WindowSpec, feature_stats, fit_linear_reducer,
                         mean_news_embedding)
from .errors import ConfigError, CoverageError, SplitError
from .indicators import FeatureMatrix, assemble_features
from .market_data import (DEFAULT_MOVE_THRESHOLD, CandleSeries, DirectionLabel,
                          LabeledPoint, compute_label)
from .retrieval import (CHART_EMBEDDING, EUCLIDEAN, MULTIMODAL, RANDOM,
                        RANKING_METHODS, CandidatePool, Ranking,
                        rank_by_embedding, rank_euclidean, rank_random)
from .vote_features import K_GRID, count_votes, softmax_normalize

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")

METHOD_TITLES = {
    RANDOM: "Random sampling",
    EUCLIDEAN: "Euclidean distance",
    CHART_EMBEDDING: "Chart embedding",
    MULTIMODAL: "Multimodal embedding",
}


@dataclass(frozen=True)
class SplitSpec:
    candidate_fraction: float = 0.8
    train_fraction: float = 0.8   # of the post-candidate remainder
    val_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.candidate_fraction < 1:
            raise ConfigError("candidate_fraction must be in (0, 1)")
        if self.train_fraction <= 0 or self.val_fraction <= 0:
            raise ConfigError("train/val fractions must be positive")
        if self.train_fraction + self.val_fraction >= 1:
            raise ConfigError("train + val fractions must leave room for test")


@dataclass(frozen=True)
class SplitIndices:
    candidate: range
    train: range
    val: range
    test: range

    def sizes(self) -> tuple[int, int, int, int]:
        return (len(self.candidate), len(self.train), len(self.val), len(self.test))


def split_dataset(n: int, spec: SplitSpec = SplitSpec()) -> SplitIndices:
    """Chronological split by count: floor for candidates/train/val,
    remainder to test. All four parts must be non-empty."""
    candidates = int(spec.candidate_fraction * n)
    rest = n - candidates
    train = int(spec.train_fraction * rest)
    val = int(spec.val_fraction * rest)
    test = rest - train - val
    if min(candidates, train, val, test) < 1:
        raise SplitError(f"{n} points split into {candidates}/{train}/{val}/{test}; "
                         "every part must be non-empty")
    return SplitIndices(
        candidate=range(0, candidates),
        train=range(candidates, candidates + train),
        val=range(candidates + train, candidates + train + val),
        test=range(candidates + train + val, n),
    )


@dataclass
class ExperimentConfig:
    methods: tuple[str, ...] = (RANDOM, EUCLIDEAN, CHART_EMBEDDING, MULTIMODAL)
    k_grid: tuple[int, ...] = K_GRID
    random_repetitions: int = 100
    seed: int = 7
    window: int = 6
    label_threshold: float = DEFAULT_MOVE_THRESHOLD
    split: SplitSpec = field(default_factory=SplitSpec)
    train: gbt.TrainConfig = field(default_factory=gbt.TrainConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    backtest_method: str = MULTIMODAL
    backtest_k: int = 5
    select_k_on_validation: bool = False

    def __post_init__(self):
        for method in self.methods:
            if method not in RANKING_METHODS:
                raise ConfigError(f"unknown ranking method {method!r}")
        if not self.methods:
            raise ConfigError("at least one ranking method is required")
        for k in self.k_grid:
            if k not in K_GRID:
                raise ConfigError(f"K={k} outside the supported grid {K_GRID}")
        if self.backtest_method not in self.methods:
            raise ConfigError(f"backtest method {self.backtest_method!r} is not "
                              f"among the configured methods {self.methods}")
        if self.backtest_k not in self.k_grid:
            raise ConfigError(f"backtest K={self.backtest_k} not in the grid")
        if self.random_repetitions < 1:
            raise ConfigError("random_repetitions must be >= 1")


@dataclass
class PreparedDataset:
    """Everything downstream of feature/label computation and the split."""

    series: CandleSeries
    matrix: FeatureMatrix
    labels: dict[int, DirectionLabel]
    points: list[LabeledPoint]
    splits: SplitIndices
    usable_start: int
    pool_indices: np.ndarray
    query_indices: dict[str, np.ndarray]
    pool_mean: np.ndarray
    pool_std: np.ndarray
    class_weights: tuple[float, float, float]
    chart_store: EmbeddingStore
    multimodal_store: EmbeddingStore
    reducer: LinearReducer | None

    def row_of(self, index: int) -> int:
        """Matrix row for a timeline index."""
        return index - self.matrix.warmup

    def timestamp_of(self, index: int) -> int:
        return int(self.series[index].open_time)

    def feature_rows(self, indices) -> np.ndarray:
        return self.matrix.values[[self.row_of(int(i)) for i in indices]]

    def label_array(self, indices) -> np.ndarray:
        return np.array([int(self.labels[int(i)]) for i in indices], dtype=np.int64)


def prepare_dataset(series: CandleSeries, config: ExperimentConfig,
                    chart_store: EmbeddingStore | None = None,
                    news_raw: EmbeddingStore | None = None,
                    news_reduced: EmbeddingStore | None = None) -> PreparedDataset:
    """Label, feature, split, and embed; all fitted statistics candidate-only.

    When no external chart store is supplied, the baseline random-projection
    embedder stands in. When neither news store is supplied, multimodal
    vectors degrade to the chart vectors (the news term is zero).
    """
    matrix = assemble_features(series)
    n = len(series)
    labels: dict[int, DirectionLabel] = {}
    points: list[LabeledPoint] = []
    for t in range(n - 1):
        point = compute_label(series, t, config.label_threshold)
        labels[t] = point.label
        points.append(point)

    splits = split_dataset(n, config.split)
    usable_start = matrix.warmup + config.window - 1
    pool_indices = np.array([i for i in splits.candidate if i >= usable_start],
                            dtype=np.int64)
    if len(pool_indices) == 0:
        raise SplitError("candidate split is consumed entirely by warmup")
    query_indices = {}
    for name in SPLIT_NAMES:
        split_range = getattr(splits, name)
        query_indices[name] = np.array(
            [i for i in split_range if i >= usable_start and i in labels],
            dtype=np.int64)
        if len(query_indices[name]) == 0:
            raise SplitError(f"{name} split has no usable points")

    pool_rows = [i - matrix.warmup for i in pool_indices]
    pool_mean, pool_std = feature_stats(matrix, pool_rows)

    train_labels = np.array([int(labels[int(i)]) for i in query_indices["train"]])
    class_weights = (config.train.class_weights
                     or gbt.balanced_class_weights(train_labels))

    needed = np.concatenate([pool_indices] + [query_indices[s] for s in SPLIT_NAMES])
    if chart_store is None:
        embedder = BaselineChartEmbedder(pool_mean, pool_std, WindowSpec(config.window),
                                         seed=config.seed)
        chart_store = embedder.embed_rows(matrix, [i - matrix.warmup for i in needed])
    else:
        missing = [int(series[i].open_time) for i in needed
                   if int(series[i].open_time) not in chart_store]
        if missing:
            raise CoverageError(f"chart store misses {len(missing)} needed timestamps, "
                                f"first at {missing[0]}")

    reducer = None
    if news_reduced is None and news_raw is not None:
        candidate_end = int(series[splits.candidate[-1]].open_time) + series.interval_ms
        candidate_news = {int(t): news_raw.get(int(t)).values
                          for t in news_raw.timestamps if int(t) <= candidate_end}
        reducer = fit_linear_reducer(EmbeddingStore("news_raw", candidate_news))
        news_reduced = reducer.reduce_store(news_raw)

    multimodal_entries = {}
    for i in needed:
        ts = int(series[i].open_time)
        chart_vec = chart_store.get(ts)
        news_vec = None
        if news_reduced is not None:
            news_vec = mean_news_embedding(news_reduced, ts, ts + series.interval_ms)
        summed = chart_vec.values if news_vec is None else chart_vec.values + news_vec.values
        multimodal_entries[ts] = summed
    multimodal_store = EmbeddingStore("multimodal", multimodal_entries)

    logger.info("prepared dataset: %d bars, splits %s, pool %d, queries %s",
                n, splits.sizes(), len(pool_indices),
                {k: len(v) for k, v in query_indices.items()})
    return PreparedDataset(series=series, matrix=matrix, labels=labels, points=points,
                           splits=splits, usable_start=usable_start,
                           pool_indices=pool_indices, query_indices=query_indices,
                           pool_mean=pool_mean, pool_std=pool_std,
                           class_weights=tuple(class_weights),
                           chart_store=chart_store, multimodal_store=multimodal_store,
                           reducer=reducer)


def fitted_statistics_digest(prepared: PreparedDataset) -> str:
    """Checksum of every statistic fitted from data (leakage tripwire)."""
    digest = hashlib.sha256()
    digest.update(prepared.pool_mean.tobytes())
    digest.update(prepared.pool_std.tobytes())
    digest.update(np.asarray(prepared.class_weights).tobytes())
    if prepared.reducer is not None:
        digest.update(prepared.reducer.mean.tobytes())
        digest.update(prepared.reducer.components.tobytes())
    return digest.hexdigest()


def _pool_for(prepared: PreparedDataset, method: str) -> CandidatePool:
    timestamps = np.array([prepared.timestamp_of(int(i)) for i in prepared.pool_indices],
                          dtype=np.int64)
    if method == EUCLIDEAN:
        return CandidatePool(indices=prepared.pool_indices, timestamps=timestamps,
                             features=prepared.feature_rows(prepared.pool_indices))
    if method == CHART_EMBEDDING:
        return CandidatePool(indices=prepared.pool_indices, timestamps=timestamps,
                             embeddings=prepared.chart_store)
    if method == MULTIMODAL:
        return CandidatePool(indices=prepared.pool_indices, timestamps=timestamps,
                             embeddings=prepared.multimodal_store)
    if method == RANDOM:
        return CandidatePool(indices=prepared.pool_indices, timestamps=timestamps)
    raise ConfigError(f"unknown method {method!r}")


def random_ranking_seed(base_seed: int, repetition: int, query_index: int) -> int:
    """Stable per-(repetition, query) seed, independent of iteration order."""
    seq = np.random.SeedSequence((base_seed, repetition, query_index))
    return int(seq.generate_state(1)[0])


@dataclass
class RankingSet:
    """Top-30 neighbor lists per method (and per repetition for random)."""

    by_method: dict[str, dict[int, Ranking]]
    random_reps: list[dict[int, Ranking]]


def compute_rankings(prepared: PreparedDataset, config: ExperimentConfig,
                     cached: Mapping[str, Mapping[int, Ranking]] | None = None
                     ) -> RankingSet:
    """Rank every train/val/test query against the candidate pool.

    ``cached`` may supply distance-method rankings (from the cache file);
    random rankings are always regenerated from the seed.
    """
    all_queries = np.concatenate([prepared.query_indices[s] for s in SPLIT_NAMES])
    by_method: dict[str, dict[int, Ranking]] = {}
    for method in config.methods:
        if method == RANDOM:
            continue
        if cached is not None and method in cached:
            missing = [q for q in all_queries if int(q) not in cached[method]]
            if missing:
                raise CoverageError(f"ranking cache misses {len(missing)} queries for "
                                    f"{method}, first index {missing[0]}")
            by_method[method] = {int(q): cached[method][int(q)] for q in all_queries}
            continue
        pool = _pool_for(prepared, method)
        rankings = {}
        for q in all_queries:
            q = int(q)
            ts = prepared.timestamp_of(q)
            if method == EUCLIDEAN:
                rankings[q] = rank_euclidean(prepared.matrix.row(prepared.row_of(q)),
                                             pool, k=30, query_index=q)
            else:
                store = (prepared.chart_store if method == CHART_EMBEDDING
                         else prepared.multimodal_store)
                query_vec = store.get(ts)
                rankings[q] = rank_by_embedding(query_vec, pool, method=method, k=30,
                                                query_index=q)
        by_method[method] = rankings
        logger.info("ranked %d queries with %s", len(rankings), method)

    random_reps: list[dict[int, Ranking]] = []
    if RANDOM in config.methods:
        pool = _pool_for(prepared, RANDOM)
        for rep in range(config.random_repetitions):
            rankings = {}
            for q in all_queries:
                q = int(q)
                seed = random_ranking_seed(config.seed, rep, q)
                rankings[q] = rank_random(q, prepared.timestamp_of(q), pool, k=30,
                                          seed=seed)
            random_reps.append(rankings)
        logger.info("sampled %d random ranking repetitions", len(random_reps))
    return RankingSet(by_method=by_method, random_reps=random_reps)


@dataclass
class CellMetrics:
    """Test metrics of one (method, K) grid cell, with validation alongside."""

    test: gbt.Metrics
    val: gbt.Metrics


@dataclass
class ResultsTable:
    """Per-method metrics across the K grid against the no-FE baseline."""

    baseline: CellMetrics
    cells: dict[str, dict[int, CellMetrics]]
    k_grid: tuple[int, ...]
    methods: tuple[str, ...]

    def average(self, method: str) -> tuple[float, float]:
        accs = [self.cells[method][k].test.accuracy for k in self.k_grid]
        f1s = [self.cells[method][k].test.weighted_f1 for k in self.k_grid]
        return float(np.mean(accs)), float(np.mean(f1s))

    def to_csv(self) -> str:
        columns = ["no_fe"] + [f"top_{k}" for k in self.k_grid] + ["average"]
        lines = ["method,metric," + ",".join(columns)]
        for method in self.methods:
            acc = [self.cells[method][k].test.accuracy for k in self.k_grid]
            f1 = [self.cells[method][k].test.weighted_f1 for k in self.k_grid]
            avg_acc, avg_f1 = self.average(method)
            lines.append(",".join([method, "accuracy_pct",
                                   repr(self.baseline.test.accuracy * 100)]
                                  + [repr(a * 100) for a in acc]
                                  + [repr(avg_acc * 100)]))
            lines.append(",".join([method, "weighted_f1",
                                   repr(self.baseline.test.weighted_f1)]
                                  + [repr(v) for v in f1] + [repr(avg_f1)]))
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        """Markdown table mirroring the familiar layout, columns padded so the
        raw text reads as an aligned grid."""
        header = (["Ranking strategy", "No FE"] + [f"Top {k}" for k in self.k_grid]
                  + ["Average"])
        rows = [header]
        base_acc = self.baseline.test.accuracy * 100
        base_f1 = self.baseline.test.weighted_f1
        for method in self.methods:
            title = METHOD_TITLES.get(method, method)
            acc_cells, f1_cells = [], []
            for k in self.k_grid:
                acc = self.cells[method][k].test.accuracy * 100
                f1 = self.cells[method][k].test.weighted_f1
                acc_cells.append(f"{acc:.3f} ({acc - base_acc:+.3f})")
                f1_cells.append(f"{f1:.3f} ({f1 - base_f1:+.3f})")
            avg_acc, avg_f1 = self.average(method)
            avg_acc *= 100
            rows.append([f"{title} - accuracy (%)", f"{base_acc:.3f}"] + acc_cells
                        + [f"**{avg_acc:.3f} ({avg_acc - base_acc:+.3f})**"])
            rows.append([f"{title} - weighted F1", f"{base_f1:.3f}"] + f1_cells
                        + [f"**{avg_f1:.3f} ({avg_f1 - base_f1:+.3f})**"])
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        def fmt(row):
            return "| " + " | ".join(cell.ljust(w) for cell, w in zip(row, widths)) + " |"
        lines = [fmt(rows[0]),
                 "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
        lines += [fmt(row) for row in rows[1:]]
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    prepared: PreparedDataset
    rankings: RankingSet
    table: ResultsTable
    backtest_method: str
    backtest_k: int
    backtest_model_json: str
    equity: EquityCurve
    benchmark: EquityCurve
    trades: list[Trade]
    test_predictions: list[DirectionLabel]
    # Per-repetition test metrics of the random baseline, keyed by K; the
    # table keeps only their means but significance checks need the spread.
    random_rep_test_metrics: dict[int, list[gbt.Metrics]] = field(default_factory=dict)


def _votes_for(prepared: PreparedDataset, rankings: Mapping[int, Ranking],
               indices, k: int):
    votes = []
    for i in indices:
        counted = count_votes(rankings[int(i)], prepared.labels, k)
        votes.append(softmax_normalize(counted))
    return votes


def _augmented_rows(prepared: PreparedDataset, rankings, indices, k: int) -> np.ndarray:
    base = prepared.feature_rows(indices)
    votes = np.array([v.probs for v in _votes_for(prepared, rankings, indices, k)])
    return np.hstack([base, votes])


def _train_cell(prepared: PreparedDataset, config: ExperimentConfig,
                rankings: Mapping[int, Ranking] | None, k: int | None
                ) -> tuple[gbt.Ensemble, CellMetrics]:
    """Fit one model (baseline when rankings is None) and evaluate it."""
    train_idx = prepared.query_indices["train"]
    val_idx = prepared.query_indices["val"]
    test_idx = prepared.query_indices["test"]
    if rankings is None:
        x_train = prepared.feature_rows(train_idx)
        x_val = prepared.feature_rows(val_idx)
        x_test = prepared.feature_rows(test_idx)
    else:
        x_train = _augmented_rows(prepared, rankings, train_idx, k)
        x_val = _augmented_rows(prepared, rankings, val_idx, k)
        x_test = _augmented_rows(prepared, rankings, test_idx, k)
    train_config = replace(config.train, class_weights=prepared.class_weights)
    model = gbt.fit(x_train, prepared.label_array(train_idx), train_config)
    test_metrics = gbt.evaluate(gbt.predict(model, x_test),
                                prepared.label_array(test_idx))
    val_metrics = gbt.evaluate(gbt.predict(model, x_val),
                               prepared.label_array(val_idx))
    return model, CellMetrics(test=test_metrics, val=val_metrics)


def _mean_metrics(metrics: Sequence[gbt.Metrics]) -> gbt.Metrics:
    directional = [m.directional_accuracy for m in metrics
                   if m.directional_accuracy is not None]
    return gbt.Metrics(
        accuracy=float(np.mean([m.accuracy for m in metrics])),
        weighted_f1=float(np.mean([m.weighted_f1 for m in metrics])),
        directional_accuracy=float(np.mean(directional)) if directional else None,
    )


def run_experiment(series: CandleSeries, config: ExperimentConfig,
                   chart_store: EmbeddingStore | None = None,
                   news_raw: EmbeddingStore | None = None,
                   news_reduced: EmbeddingStore | None = None,
                   cached_rankings: Mapping[str, Mapping[int, Ranking]] | None = None
                   ) -> ExperimentResult:
    """The full grid: baseline, every (method, K) cell, and the backtest."""
    prepared = prepare_dataset(series, config, chart_store, news_raw, news_reduced)
    rankings = compute_rankings(prepared, config, cached_rankings)

    _, baseline = _train_cell(prepared, config, None, None)
    logger.info("baseline (no FE): accuracy %.4f, weighted F1 %.4f",
                baseline.test.accuracy, baseline.test.weighted_f1)

    cells: dict[str, dict[int, CellMetrics]] = {}
    models: dict[tuple[str, int], gbt.Ensemble] = {}
    random_rep_test_metrics: dict[int, list[gbt.Metrics]] = {}
    for method in config.methods:
        cells[method] = {}
        for k in config.k_grid:
            if method == RANDOM:
                per_rep_test, per_rep_val = [], []
                for rep, rep_rankings in enumerate(rankings.random_reps):
                    model, cell = _train_cell(prepared, config, rep_rankings, k)
                    per_rep_test.append(cell.test)
                    per_rep_val.append(cell.val)
                    if rep == 0:
                        models[(method, k)] = model
                random_rep_test_metrics[k] = per_rep_test
                cells[method][k] = CellMetrics(test=_mean_metrics(per_rep_test),
                                               val=_mean_metrics(per_rep_val))
            else:
                model, cell = _train_cell(prepared, config, rankings.by_method[method], k)
                cells[method][k] = cell
                models[(method, k)] = model
            logger.info("cell %s K=%d: accuracy %.4f, F1 %.4f", method, k,
                        cells[method][k].test.accuracy,
                        cells[method][k].test.weighted_f1)

    table = ResultsTable(baseline=baseline, cells=cells, k_grid=tuple(config.k_grid),
                         methods=tuple(config.methods))

    backtest_method = config.backtest_method
    backtest_k = config.backtest_k
    if config.select_k_on_validation:
        backtest_k = max(config.k_grid,
                         key=lambda k: cells[backtest_method][k].val.weighted_f1)
        logger.info("validation selected K=%d for %s", backtest_k, backtest_method)

    model = models[(backtest_method, backtest_k)]
    test_idx = prepared.query_indices["test"]
    method_rankings = (rankings.random_reps[0] if backtest_method == RANDOM
                       else rankings.by_method[backtest_method])
    x_test = _augmented_rows(prepared, method_rankings, test_idx, backtest_k)
    predictions = [DirectionLabel(int(c)) for c in gbt.predict(model, x_test)]
    start_index = int(test_idx[0])
    equity, trades = simulate(prepared.series, predictions, start_index, config.backtest)
    benchmark = buy_and_hold(prepared.series, start_index, len(predictions),
                             config.backtest.initial_equity)
    return ExperimentResult(config=config, prepared=prepared, rankings=rankings,
                            table=table, backtest_method=backtest_method,
                            backtest_k=backtest_k,
                            backtest_model_json=gbt.ensemble_to_json(model),
                            equity=equity, benchmark=benchmark, trades=trades,
                            test_predictions=predictions,
                            random_rep_test_metrics=random_rep_test_metrics)
