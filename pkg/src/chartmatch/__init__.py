"""Chart-pattern retrieval features for BTC directional forecasting.

Pipeline: label 4-hour candles by next-bar excursions, rank similar past
chart segments four ways, turn neighbor labels into softmax vote features,
train gradient-boosted trees with and without them, and backtest the
predictions under stop-loss/commission rules.
"""

from .backtest import BacktestConfig, EquityCurve, Trade, buy_and_hold, simulate
from .embeddings import (BaselineChartEmbedder, EmbeddingStore, EmbeddingVector,
                         WindowSpec, combine_multimodal, cosine_distance,
                         fit_linear_reducer, load_embeddings, mean_news_embedding,
                         save_embeddings)
from .errors import ChartMatchError
from .gbt import (Ensemble, Metrics, TrainConfig, ensemble_from_json,
                  ensemble_to_json, evaluate, fit, predict, predict_proba)
from .indicators import (FeatureMatrix, FeatureVector, assemble_features,
                         feature_names, read_features_csv, write_features_csv)
from .klines import fetch_klines
from .market_data import (Candle, CandleSeries, DirectionLabel, LabeledPoint,
                          compute_label, label_distribution, label_series,
                          parse_candles, write_candles)
from .pipeline import (ExperimentConfig, ExperimentResult, ResultsTable, SplitSpec,
                       prepare_dataset, run_experiment, split_dataset)
from .retrieval import (CandidatePool, Ranking, rank_by_embedding, rank_euclidean,
                        rank_random, read_rankings_csv, write_rankings_csv)
from .vote_features import (K_GRID, NormalizedVote, VoteVector, augment_features,
                            count_votes, softmax_normalize)

__version__ = "0.1.0"
