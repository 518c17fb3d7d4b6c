"""Multiclass gradient-boosted trees with exact greedy splits.

Second-order boosting on the weighted softmax log-loss: each round fits one
regression tree per class to the gradient/hessian of that class's logit,
with leaf values -G/(H + l2_reg) scaled by the learning rate. Splits are
found by exact scans over every feature (the datasets here are a few
thousand rows, so histogram approximations buy nothing), with ties broken
by lowest feature index then lowest threshold so training is bitwise
reproducible across platforms and thread counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import AlignmentError, ShapeError, TrainingError
from .market_data import DirectionLabel

N_CLASSES = 3

# Keeps leaf denominators sane when predicted probabilities saturate.
HESSIAN_FLOOR = 1e-16


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 200
    learning_rate: float = 0.3
    max_depth: int = 6
    class_weights: tuple[float, float, float] | None = None  # None: balanced on train
    seed: int = 0  # reserved; training has no stochastic component
    l2_reg: float = 1.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.l2_reg < 0 or self.min_child_weight < 0:
            raise ValueError("regularizers must be non-negative")
        if self.class_weights is not None:
            if len(self.class_weights) != N_CLASSES or min(self.class_weights) <= 0:
                raise ValueError("class_weights must be 3 positive reals")


@dataclass
class Metrics:
    accuracy: float
    weighted_f1: float
    directional_accuracy: float | None


def balanced_class_weights(y: np.ndarray) -> tuple[float, float, float]:
    """n / (3 * count_c); classes absent from y get weight 1."""
    y = np.asarray(y)
    counts = np.bincount(y, minlength=N_CLASSES)
    n = len(y)
    return tuple(n / (N_CLASSES * c) if c > 0 else 1.0 for c in counts)


class Ensemble:
    """rounds x 3 regression trees plus a per-class base logit."""

    def __init__(self, trees: list[list[dict]], base_score: np.ndarray, n_features: int,
                 config: TrainConfig, class_weights: tuple[float, float, float],
                 train_loss: list[float]):
        self.trees = trees
        self.base_score = np.asarray(base_score, dtype=np.float64)
        self.n_features = n_features
        self.config = config
        self.class_weights = class_weights
        self.train_loss = list(train_loss)
        self._flat: list[list[tuple]] | None = None

    @property
    def rounds(self) -> int:
        return len(self.trees)

    def _flatten(self):
        if self._flat is None:
            self._flat = [[_flatten_tree(tree) for tree in round_trees]
                          for round_trees in self.trees]
        return self._flat


def fit(x: np.ndarray, y, config: TrainConfig = TrainConfig()) -> Ensemble:
    """Train on rows ``x`` with integer/DirectionLabel targets ``y``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray([int(v) for v in y], dtype=np.int64)
    if x.ndim != 2:
        raise TrainingError("x must be a 2-D matrix")
    n, m = x.shape
    if n < 2 or n != len(y):
        raise TrainingError(f"need >= 2 aligned rows, got {n} x rows / {len(y)} labels")
    if not np.all(np.isfinite(x)):
        raise TrainingError("training matrix contains non-finite values")
    if np.any((y < 0) | (y >= N_CLASSES)):
        raise TrainingError("labels must be in {0, 1, 2}")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set has fewer than 2 classes")

    weights = config.class_weights or balanced_class_weights(y)
    w = np.asarray(weights, dtype=np.float64)[y]
    base_score = np.zeros(N_CLASSES)
    margins = np.tile(base_score, (n, 1))
    one_hot = np.zeros((n, N_CLASSES))
    one_hot[np.arange(n), y] = 1.0

    # One stable presort per fit; tree growth keeps each node's rows in
    # per-feature sorted order by partitioning, so no node ever re-sorts.
    presorted = np.argsort(x, axis=0, kind="stable")
    scratch = np.empty(n, dtype=bool)

    trees: list[list[dict]] = []
    loss_history = [_weighted_logloss(margins, y, w)]
    for _ in range(config.rounds):
        probs = _softmax(margins)
        round_trees = []
        for c in range(N_CLASSES):
            g = w * (probs[:, c] - one_hot[:, c])
            h = np.maximum(w * probs[:, c] * (1.0 - probs[:, c]), HESSIAN_FLOOR)
            root = _build_tree(x, g, h, np.arange(n), presorted, scratch, 0, config)
            round_trees.append(root)
            margins[:, c] += _eval_tree(_flatten_tree(root), x)
        trees.append(round_trees)
        loss_history.append(_weighted_logloss(margins, y, w))
    return Ensemble(trees, base_score, m, replace(config, class_weights=tuple(weights)),
                    tuple(weights), loss_history)


def _build_tree(x, g, h, rows, sorted_rows, scratch, depth, config) -> dict:
    """``rows`` is the node's row set ascending by index; ``sorted_rows``
    column f holds the same rows ascending in feature f."""
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    n_node = len(rows)
    if depth >= config.max_depth or n_node < 2:
        return _leaf(G, H, config)
    split = _best_split(x, g, h, sorted_rows, G, H, config)
    if split is None:
        return _leaf(G, H, config)
    feature, threshold = split
    node_mask = x[rows, feature] < threshold
    n_left = int(node_mask.sum())
    m = sorted_rows.shape[1]
    scratch[rows] = node_mask
    mask = scratch[sorted_rows]
    left_sorted = sorted_rows.T[mask.T].reshape(m, n_left).T
    right_sorted = sorted_rows.T[~mask.T].reshape(m, n_node - n_left).T
    return {
        "feature": int(feature),
        "threshold": float(threshold),
        "left": _build_tree(x, g, h, rows[node_mask], left_sorted, scratch,
                            depth + 1, config),
        "right": _build_tree(x, g, h, rows[~node_mask], right_sorted, scratch,
                             depth + 1, config),
    }


def _leaf(G, H, config) -> dict:
    return {"leaf": config.learning_rate * (-G / (H + config.l2_reg))}


def _best_split(x, g, h, sorted_rows, G, H, config):
    """Exact scan over all features at once; None when no split gains."""
    columns = np.arange(sorted_rows.shape[1])
    xs = x[sorted_rows, columns]
    g_cum = np.cumsum(g[sorted_rows], axis=0)
    h_cum = np.cumsum(h[sorted_rows], axis=0)

    GL, HL = g_cum[:-1], h_cum[:-1]
    GR, HR = G - GL, H - HL
    lam = config.l2_reg
    parent = G * G / (H + lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent
    valid = ((xs[:-1] < xs[1:])
             & (HL >= config.min_child_weight)
             & (HR >= config.min_child_weight))
    gain = np.where(valid, gain, -np.inf)
    if gain.size == 0:
        return None
    # First max down a column = the smallest qualifying threshold; first max
    # across the per-feature bests = the lowest feature index.
    best_pos = np.argmax(gain, axis=0)
    best_per_feature = gain[best_pos, np.arange(gain.shape[1])]
    feature = int(np.argmax(best_per_feature))
    if not best_per_feature[feature] > 0:
        return None
    pos = int(best_pos[feature])
    threshold = (xs[pos, feature] + xs[pos + 1, feature]) / 2.0
    return feature, threshold


def _flatten_tree(root: dict):
    """Array form (feature, threshold, left, right, value) for fast eval."""
    feature, threshold, left, right, value = [], [], [], [], []

    def add(node):
        i = len(feature)
        if "leaf" in node:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(node["leaf"])
        else:
            feature.append(node["feature"])
            threshold.append(node["threshold"])
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            left[i] = add(node["left"])
            right[i] = add(node["right"])
        return i

    add(root)
    return (np.array(feature), np.array(threshold), np.array(left),
            np.array(right), np.array(value))


def _eval_tree(flat, x: np.ndarray) -> np.ndarray:
    feature, threshold, left, right, value = flat
    idx = np.zeros(len(x), dtype=np.int64)
    active = feature[idx] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        node = idx[rows]
        goes_left = x[rows, feature[node]] < threshold[node]
        idx[rows] = np.where(goes_left, left[node], right[node])
        active[rows] = feature[idx[rows]] >= 0
    return value[idx]


def _softmax(margins: np.ndarray) -> np.ndarray:
    shifted = margins - margins.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def _weighted_logloss(margins, y, w) -> float:
    shifted = margins - margins.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    per_row = log_norm - shifted[np.arange(len(y)), y]
    return float((w * per_row).sum() / w.sum())


def predict_proba(model: Ensemble, x: np.ndarray) -> np.ndarray:
    """Class probabilities; accepts one row or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.n_features:
        raise ShapeError(f"model expects {model.n_features} features, got {x.shape[1]}")
    margins = np.tile(model.base_score, (len(x), 1))
    for round_trees in model._flatten():
        for c, flat in enumerate(round_trees):
            margins[:, c] += _eval_tree(flat, x)
    probs = _softmax(margins)
    return probs[0] if single else probs


def predict(model: Ensemble, x: np.ndarray) -> np.ndarray:
    """Argmax class per row (ties to the lowest class index)."""
    probs = predict_proba(model, x)
    if probs.ndim == 1:
        return np.argmax(probs)
    return np.argmax(probs, axis=1)


def evaluate(predictions: Sequence, truth: Sequence) -> Metrics:
    """Accuracy, support-weighted F1, and accuracy on directional calls.

    The directional slice keeps only rows where both the prediction and the
    truth are LONG or SHORT; None when no row qualifies.
    """
    preds = np.asarray([int(v) for v in predictions], dtype=np.int64)
    plain = np.asarray([int(v) for v in truth], dtype=np.int64)
    if len(preds) != len(plain):
        raise AlignmentError(f"{len(preds)} predictions for {len(plain)} truths")
    if len(preds) == 0:
        raise AlignmentError("cannot evaluate empty prediction set")

    accuracy = float((preds == plain).mean())
    weighted_f1 = 0.0
    n = len(plain)
    for c in range(N_CLASSES):
        tp = int(((preds == c) & (plain == c)).sum())
        fp = int(((preds == c) & (plain != c)).sum())
        fn = int(((preds != c) & (plain == c)).sum())
        support = tp + fn
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / support if support > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        weighted_f1 += (support / n) * f1

    directional = ((preds != DirectionLabel.HOLD) & (plain != DirectionLabel.HOLD))
    directional_accuracy = (float((preds[directional] == plain[directional]).mean())
                            if directional.any() else None)
    return Metrics(accuracy=accuracy, weighted_f1=weighted_f1,
                   directional_accuracy=directional_accuracy)


def ensemble_to_json(model: Ensemble) -> str:
    """Self-describing dump; floats use repr so reloads are bit-identical."""
    payload = {
        "kind": "chartmatch-gbt",
        "n_features": model.n_features,
        "base_score": [float(v) for v in model.base_score],
        "class_weights": [float(v) for v in model.class_weights],
        "config": {
            "rounds": model.config.rounds,
            "learning_rate": model.config.learning_rate,
            "max_depth": model.config.max_depth,
            "l2_reg": model.config.l2_reg,
            "min_child_weight": model.config.min_child_weight,
            "seed": model.config.seed,
        },
        "train_loss": model.train_loss,
        "trees": model.trees,
    }
    return json.dumps(payload)


def ensemble_from_json(text: str) -> Ensemble:
    payload = json.loads(text)
    if payload.get("kind") != "chartmatch-gbt":
        raise ShapeError("not a chartmatch gbt model dump")
    weights = tuple(payload["class_weights"])
    config = TrainConfig(class_weights=weights, **payload["config"])
    return Ensemble(payload["trees"], np.array(payload["base_score"]),
                    int(payload["n_features"]), config, weights,
                    payload["train_loss"])
