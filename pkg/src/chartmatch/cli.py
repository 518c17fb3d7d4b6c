"""Command-line pipeline: fetch, features, rank, train, backtest, report.

Every command takes a YAML/JSON config file (--config) whose values flags
override. The kline base URL comes from CHARTMATCH_KLINES_BASE_URL when set.
"""

from __future__ import annotations

import json
import logging
from datetime import datetime, timezone
from pathlib import Path

import click
import yaml

from . import gbt
from .backtest import BacktestConfig, write_equity_csv, write_trades_csv
from .embeddings import load_embeddings
from .errors import ConfigError
from .indicators import assemble_features, write_features_csv
from .klines import INTERVAL_TOKENS, fetch_klines
from .market_data import (label_distribution, label_series, parse_candles,
                          write_candles)
from .pipeline import ExperimentConfig, SplitSpec, run_experiment
from .retrieval import DISTANCE_METHODS, read_rankings_csv, write_rankings_csv
from .vote_features import K_GRID

logger = logging.getLogger(__name__)

# Reproduction defaults: the 4h BTC/USDT history used throughout the README.
DEFAULT_SYMBOL = "BTCUSDT"
DEFAULT_START = "2017-08-23T16:00"
DEFAULT_END = "2023-01-16T00:00"

TOKEN_TO_MS = {token: ms for ms, token in INTERVAL_TOKENS.items()}


def _parse_time(value: str) -> int:
    """Epoch ms from an integer string or ISO 8601 (naive means UTC)."""
    try:
        return int(value)
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(value)
    except ValueError as exc:
        raise ConfigError(f"unparseable time {value!r}: {exc}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return int(stamp.timestamp() * 1000)


def _parse_interval(value: str) -> int:
    if value in TOKEN_TO_MS:
        return TOKEN_TO_MS[value]
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"unknown interval {value!r}; use one of "
                          f"{sorted(TOKEN_TO_MS)} or milliseconds") from None


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def _section(config: dict, name: str) -> dict:
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return value


def _build_experiment_config(config: dict, **overrides) -> ExperimentConfig:
    exp = _section(config, "experiment")
    train = _section(config, "train")
    backtest = _section(config, "backtest")
    split = _section(config, "split")

    kwargs = dict(
        methods=tuple(exp.get("methods", ("random", "euclidean", "chart_embedding",
                                          "multimodal"))),
        k_grid=tuple(exp.get("k_grid", K_GRID)),
        random_repetitions=exp.get("random_repetitions", 100),
        seed=exp.get("seed", 7),
        window=exp.get("window", 6),
        label_threshold=exp.get("label_threshold", 0.0075),
        select_k_on_validation=exp.get("select_k_on_validation", False),
        split=SplitSpec(**split) if split else SplitSpec(),
        train=gbt.TrainConfig(
            rounds=train.get("rounds", 200),
            learning_rate=train.get("learning_rate", 0.3),
            max_depth=train.get("max_depth", 6),
            l2_reg=train.get("l2_reg", 1.0),
            min_child_weight=train.get("min_child_weight", 1.0),
            seed=train.get("seed", 0),
        ),
        backtest=BacktestConfig(
            stop_loss=backtest.get("stop_loss", 0.0075),
            commission=backtest.get("commission", 0.0004),
            initial_equity=backtest.get("initial_equity", 1.0),
        ),
        backtest_method=backtest.get("method", "multimodal"),
        backtest_k=backtest.get("k", 5),
    )
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _load_series(config: dict, data_path=None, gap_policy=None):
    data = _section(config, "data")
    path = data_path or data.get("csv") or data.get("json")
    policy = gap_policy or data.get("gap_policy", "allow")
    if path:
        fmt = data.get("format") or ("json" if str(path).endswith(".json") else "csv")
        with open(path, "rb") as fh:
            return parse_candles(fh, fmt, gap_policy=policy)
    if "symbol" in data:
        return fetch_klines(
            data.get("symbol", DEFAULT_SYMBOL),
            _parse_interval(str(data.get("interval", "4h"))),
            _parse_time(str(data.get("start", DEFAULT_START))),
            _parse_time(str(data.get("end", DEFAULT_END))),
            gap_policy=policy)
    raise ConfigError("no data source: pass --data or set data.csv/data.symbol "
                      "in the config")


def _load_stores(config: dict):
    section = _section(config, "embeddings")
    stores = {}
    for key in ("chart", "news_raw", "news_reduced"):
        if section.get(key):
            stores[key] = load_embeddings(section[key])
            expected = {"chart": "chart", "news_raw": "news_raw",
                        "news_reduced": "news_reduced"}[key]
            if stores[key].kind != expected:
                raise ConfigError(f"embeddings.{key} file has kind "
                                  f"{stores[key].kind!r}, expected {expected!r}")
    return stores


def _output_dir(config: dict, override=None) -> Path:
    out = Path(override or config.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Chart-pattern retrieval features for BTC directional forecasting."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--symbol", default=DEFAULT_SYMBOL, show_default=True)
@click.option("--interval", default="4h", show_default=True)
@click.option("--start", default=DEFAULT_START, show_default=True)
@click.option("--end", default=DEFAULT_END, show_default=True)
@click.option("--gap-policy", type=click.Choice(["error", "allow", "ffill"]),
              default="allow", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def fetch(symbol, interval, start, end, gap_policy, out):
    """Download historical klines to a candle CSV."""
    series = fetch_klines(symbol, _parse_interval(interval), _parse_time(start),
                          _parse_time(end), gap_policy=gap_policy)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(write_candles(series, "csv"), encoding="utf-8")
    fractions = label_distribution(label_series(series))
    click.echo(f"wrote {len(series)} bars to {out}; label distribution "
               f"long {fractions[0]:.2%} / short {fractions[1]:.2%} / "
               f"hold {fractions[2]:.2%}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", "data_path", type=click.Path(exists=True))
@click.option("--gap-policy", type=click.Choice(["error", "allow", "ffill"]))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def features(config_path, data_path, gap_policy, out):
    """Compute the 69-column indicator matrix and write it as CSV."""
    config = _load_config_file(config_path)
    series = _load_series(config, data_path, gap_policy)
    matrix = assemble_features(series)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_features_csv(matrix, out)
    click.echo(f"wrote {len(matrix)} rows x {matrix.width} features to {out} "
               f"(warmup {matrix.warmup} bars)")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", "data_path", type=click.Path(exists=True))
@click.option("--methods", help="Comma-separated subset of distance methods.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def rank(config_path, data_path, methods, out):
    """Rank all train/val/test queries and cache the neighbor lists.

    Caches euclidean/chart_embedding/multimodal rankings; random rankings
    are cheap and always regenerated from the seed.
    """
    from .pipeline import compute_rankings, prepare_dataset

    config = _load_config_file(config_path)
    wanted = tuple(methods.split(",")) if methods else None
    exp_config = _build_experiment_config(config, methods=wanted)
    distance_only = tuple(m for m in exp_config.methods if m in DISTANCE_METHODS)
    if not distance_only:
        raise ConfigError("no distance-based methods configured to cache")
    exp_config = _build_experiment_config(config, methods=distance_only,
                                          backtest_method=distance_only[0])
    series = _load_series(config, data_path)
    stores = _load_stores(config)
    prepared = prepare_dataset(series, exp_config, stores.get("chart"),
                               stores.get("news_raw"), stores.get("news_reduced"))
    ranking_set = compute_rankings(prepared, exp_config)
    flat = [ranking for per_query in ranking_set.by_method.values()
            for ranking in per_query.values()]
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_rankings_csv(flat, out)
    click.echo(f"cached {len(flat)} rankings ({', '.join(distance_only)}) to {out}")


def _load_ranking_cache(path, series):
    index_of = {int(c.open_time): i for i, c in enumerate(series)}
    rankings = read_rankings_csv(path, index_of)
    cache: dict[str, dict[int, object]] = {}
    for ranking in rankings:
        cache.setdefault(ranking.method, {})[ranking.query_index] = ranking
    return cache


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", "data_path", type=click.Path(exists=True))
@click.option("--rankings", "rankings_path", type=click.Path(exists=True),
              help="Reuse a rank-command cache instead of re-ranking.")
@click.option("--random-reps", type=int, help="Override random_repetitions.")
@click.option("--rounds", type=int, help="Override boosting rounds.")
@click.option("--out-dir", type=click.Path(file_okay=False))
def train(config_path, data_path, rankings_path, random_reps, rounds, out_dir):
    """Run the full (method x K) grid and write the results table,
    the designated model, and its backtest artifacts."""
    config = _load_config_file(config_path)
    exp_config = _build_experiment_config(config, random_repetitions=random_reps)
    if rounds:
        from dataclasses import replace
        exp_config.train = replace(exp_config.train, rounds=rounds)
    series = _load_series(config, data_path)
    stores = _load_stores(config)
    cached = _load_ranking_cache(rankings_path, series) if rankings_path else None
    result = run_experiment(series, exp_config, stores.get("chart"),
                            stores.get("news_raw"), stores.get("news_reduced"),
                            cached_rankings=cached)
    out = _output_dir(config, out_dir)
    (out / "results.csv").write_text(result.table.to_csv(), encoding="utf-8")
    (out / "results.md").write_text(result.table.to_markdown(), encoding="utf-8")
    (out / "model.json").write_text(result.backtest_model_json, encoding="utf-8")
    write_trades_csv(result.trades, out / "trades.csv")
    write_equity_csv(result.equity, result.benchmark, out / "equity.csv")
    fractions = label_distribution(result.prepared.points)
    meta = {
        "bars": len(series),
        "splits": dict(zip(("candidate", "train", "val", "test"),
                           result.prepared.splits.sizes())),
        "label_distribution": {"c0_long": fractions[0], "c1_short": fractions[1],
                               "c2_hold": fractions[2]},
        "usable_queries": {name: len(idx) for name, idx
                           in result.prepared.query_indices.items()},
        "backtest": {"method": result.backtest_method, "k": result.backtest_k,
                     "final_equity": result.equity.final,
                     "buy_and_hold_final": result.benchmark.final,
                     "trades": len(result.trades)},
        "baseline": {"accuracy": result.table.baseline.test.accuracy,
                     "weighted_f1": result.table.baseline.test.weighted_f1},
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    click.echo(result.table.to_markdown())
    click.echo(f"artifacts in {out}/: results.csv results.md model.json "
               f"trades.csv equity.csv meta.json")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", "data_path", type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["random", "euclidean",
                                             "chart_embedding", "multimodal"]))
@click.option("--k", type=int)
@click.option("--out-dir", type=click.Path(file_okay=False))
def backtest(config_path, data_path, method, k, out_dir):
    """Train one designated (method, K) model and backtest it on the test set."""
    config = _load_config_file(config_path)
    base = _build_experiment_config(config)
    chosen_method = method or base.backtest_method
    chosen_k = k or base.backtest_k
    exp_config = _build_experiment_config(
        config, methods=(chosen_method,), k_grid=(chosen_k,),
        backtest_method=chosen_method, backtest_k=chosen_k,
        random_repetitions=1)
    series = _load_series(config, data_path)
    stores = _load_stores(config)
    result = run_experiment(series, exp_config, stores.get("chart"),
                            stores.get("news_raw"), stores.get("news_reduced"))
    out = _output_dir(config, out_dir)
    write_trades_csv(result.trades, out / "trades.csv")
    write_equity_csv(result.equity, result.benchmark, out / "equity.csv")
    (out / "model.json").write_text(result.backtest_model_json, encoding="utf-8")
    click.echo(f"{chosen_method} K={chosen_k}: final equity "
               f"{result.equity.final:.4f} vs buy-and-hold "
               f"{result.benchmark.final:.4f} over {len(result.trades)} trades")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(file_okay=False))
def report(config_path, out_dir):
    """Render figures and a markdown report from the train artifacts."""
    from .plotting import plot_equity, plot_results_grid

    config = _load_config_file(config_path)
    out = _output_dir(config, out_dir)
    results_csv = out / "results.csv"
    equity_csv = out / "equity.csv"
    if not results_csv.exists() or not equity_csv.exists():
        raise ConfigError(f"missing {results_csv} or {equity_csv}; run train first")
    plot_results_grid(results_csv, out / "results.png")
    plot_equity(equity_csv, out / "equity.png")

    sections = ["# Experiment report", ""]
    meta_path = out / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        dist = meta["label_distribution"]
        sections += [
            f"- bars: {meta['bars']}, splits (candidate/train/val/test): "
            f"{meta['splits']['candidate']}/{meta['splits']['train']}/"
            f"{meta['splits']['val']}/{meta['splits']['test']}",
            f"- label distribution: long {dist['c0_long']:.2%}, "
            f"short {dist['c1_short']:.2%}, hold {dist['c2_hold']:.2%}",
            f"- backtested model: {meta['backtest']['method']} "
            f"K={meta['backtest']['k']}, final equity "
            f"{meta['backtest']['final_equity']:.4f} "
            f"(buy-and-hold {meta['backtest']['buy_and_hold_final']:.4f})",
            "",
        ]
    results_md = out / "results.md"
    if results_md.exists():
        sections += ["## Results across the K grid", "", results_md.read_text(), ""]
    sections += ["## Figures", "", "![results](results.png)", "",
                 "![equity](equity.png)", ""]
    (out / "report.md").write_text("\n".join(sections), encoding="utf-8")
    click.echo(f"wrote {out}/report.md, results.png, equity.png")


if __name__ == "__main__":
    main()
