"""Figure rendering for the report command (headless, files only)."""

from __future__ import annotations

import csv
from datetime import datetime, timezone

import matplotlib

matplotlib.use("Agg")

import matplotlib.dates as mdates
import matplotlib.pyplot as plt

from .errors import FormatError


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path} is empty")
    return rows[0], rows[1:]


def plot_equity(equity_csv, out_path) -> None:
    """Strategy vs buy-and-hold equity over the test period."""
    header, rows = _read_csv(equity_csv)
    if header[:3] != ["timestamp_ms", "strategy_equity", "buy_and_hold_equity"]:
        raise FormatError(f"unexpected equity csv header: {header}")
    times = [datetime.fromtimestamp(int(r[0]) / 1000, tz=timezone.utc) for r in rows]
    strategy = [float(r[1]) for r in rows]
    benchmark = [float(r[2]) for r in rows]

    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(times, strategy, label="model", lw=1.4)
    ax.plot(times, benchmark, label="buy and hold", lw=1.2, alpha=0.8)
    ax.set_ylabel("equity (x initial)")
    ax.set_title("Backtest equity, test period")
    ax.legend()
    ax.grid(alpha=0.3)
    ax.xaxis.set_major_formatter(mdates.DateFormatter("%Y-%m-%d"))
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_results_grid(results_csv, out_path) -> None:
    """Accuracy and weighted F1 across the K grid, one line per method."""
    header, rows = _read_csv(results_csv)
    k_columns = [c for c in header if c.startswith("top_")]
    ks = [int(c.split("_")[1]) for c in k_columns]
    per_metric = {"accuracy_pct": {}, "weighted_f1": {}}
    baselines = {}
    for row in rows:
        record = dict(zip(header, row))
        method, metric = record["method"], record["metric"]
        per_metric[metric][method] = [float(record[c]) for c in k_columns]
        baselines[metric] = float(record["no_fe"])

    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    for ax, (metric, label) in zip(axes, [("accuracy_pct", "accuracy (%)"),
                                          ("weighted_f1", "weighted F1")]):
        for method, values in per_metric[metric].items():
            ax.plot(ks, values, marker="o", ms=4, label=method)
        ax.axhline(baselines[metric], color="gray", ls="--", lw=1, label="no FE")
        ax.set_xlabel("top K neighbors")
        ax.set_ylabel(label)
        ax.set_xticks(ks)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.suptitle("Retrieval feature engineering across the K grid")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
