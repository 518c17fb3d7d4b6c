import numpy as np
import pytest

from chartmatch.errors import AlignmentError, ShapeError, TrainingError
from chartmatch.gbt import (Ensemble, TrainConfig, balanced_class_weights,
                            ensemble_from_json, ensemble_to_json, evaluate, fit,
                            predict, predict_proba)


def separable_toy(n=300, seed=0):
    """Three well-separated Gaussian blobs in 2-D."""
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [10.0, -5.0], [-8.0, 7.0]])
    y = rng.integers(0, 3, size=n)
    x = centers[y] + rng.normal(0, 0.5, size=(n, 2))
    return x, y


def noisy_set(n=500, m=8, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, m))
    logits = np.stack([x[:, 0] + 0.5 * x[:, 1],
                       -x[:, 0] + 0.3 * x[:, 2],
                       0.2 * x[:, 3]], axis=1)
    logits += rng.normal(0, 0.8, size=logits.shape)
    y = np.argmax(logits, axis=1)
    return x, y


class TestFit:
    def test_separable_reaches_perfect_training_accuracy(self):
        x, y = separable_toy()
        model = fit(x, y, TrainConfig(rounds=50))
        assert (predict(model, x) == y).all()

    def test_deterministic_refit(self):
        x, y = noisy_set()
        holdout, _ = noisy_set(n=100, seed=2)
        config = TrainConfig(rounds=30)
        a = predict_proba(fit(x, y, config), holdout)
        b = predict_proba(fit(x, y, config), holdout)
        assert np.array_equal(a, b)

    def test_train_loss_non_increasing(self):
        x, y = noisy_set(n=500)
        model = fit(x, y, TrainConfig(rounds=60))
        diffs = np.diff(model.train_loss)
        assert (diffs <= 1e-12).all()
        assert model.train_loss[-1] < model.train_loss[0]

    def test_doubled_weights_same_model_without_regularization(self):
        x, y = noisy_set(n=300)
        base = TrainConfig(rounds=15, l2_reg=0.0, min_child_weight=0.0,
                           class_weights=(1.0, 1.5, 2.0))
        doubled = TrainConfig(rounds=15, l2_reg=0.0, min_child_weight=0.0,
                              class_weights=(2.0, 3.0, 4.0))
        grid, _ = noisy_set(n=200, seed=5)
        a = predict(fit(x, y, base), grid)
        b = predict(fit(x, y, doubled), grid)
        assert np.array_equal(a, b)

    def test_two_classes_is_enough(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(100, 3))
        y = (x[:, 0] > 0).astype(int)  # classes 0 and 1 only
        model = fit(x, y, TrainConfig(rounds=10))
        assert set(np.unique(predict(model, x))) <= {0, 1}

    def test_single_class_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(TrainingError, match="classes"):
            fit(rng.normal(size=(50, 3)), np.zeros(50, dtype=int))

    def test_empty_rejected(self):
        with pytest.raises(TrainingError):
            fit(np.empty((0, 3)), [])

    def test_nan_rejected(self):
        x = np.array([[1.0, np.nan], [2.0, 3.0]])
        with pytest.raises(TrainingError):
            fit(x, [0, 1])

    def test_balanced_weights_formula(self):
        y = np.array([0] * 6 + [1] * 3 + [2] * 1)
        weights = balanced_class_weights(y)
        assert weights == pytest.approx((10 / 18, 10 / 9, 10 / 3))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(rounds=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=1.5)
        with pytest.raises(ValueError):
            TrainConfig(class_weights=(1.0, -1.0, 1.0))


class TestPredict:
    def test_zero_round_uniform_base_gives_thirds(self):
        model = Ensemble([], np.zeros(3), 5, TrainConfig(), (1.0, 1.0, 1.0), [])
        probs = predict_proba(model, np.ones(5))
        assert probs == pytest.approx([1 / 3, 1 / 3, 1 / 3], abs=1e-12)

    def test_probabilities_sum_to_one(self):
        x, y = noisy_set(n=200)
        model = fit(x, y, TrainConfig(rounds=15))
        probs = predict_proba(model, x)
        assert probs.sum(axis=1) == pytest.approx(np.ones(len(x)), abs=1e-9)
        assert (probs > 0).all()

    def test_argmax_matches_predict(self):
        x, y = noisy_set(n=200)
        model = fit(x, y, TrainConfig(rounds=15))
        assert np.array_equal(predict(model, x), np.argmax(predict_proba(model, x), axis=1))

    def test_uniform_logit_shift_keeps_predictions(self):
        x, y = noisy_set(n=200)
        model = fit(x, y, TrainConfig(rounds=15))
        before = predict(model, x)
        model.base_score = model.base_score + 3.25  # same shift for all classes
        assert np.array_equal(predict(model, x), before)

    def test_width_mismatch(self):
        x, y = noisy_set(n=100)
        model = fit(x, y, TrainConfig(rounds=5))
        with pytest.raises(ShapeError):
            predict_proba(model, np.ones((10, 3)))

    def test_single_row_input(self):
        x, y = noisy_set(n=100)
        model = fit(x, y, TrainConfig(rounds=5))
        row = predict_proba(model, x[0])
        assert row.shape == (3,)
        assert row == pytest.approx(predict_proba(model, x[:1])[0], abs=0)


def confusion_oracle(preds, truth):
    """Independent metric computation straight from the confusion matrix."""
    matrix = np.zeros((3, 3), dtype=int)
    for p, t in zip(preds, truth):
        matrix[int(t), int(p)] += 1
    total = matrix.sum()
    accuracy = np.trace(matrix) / total
    weighted_f1 = 0.0
    for c in range(3):
        tp = matrix[c, c]
        fp = matrix[:, c].sum() - tp
        fn = matrix[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        weighted_f1 += matrix[c, :].sum() / total * f1
    return accuracy, weighted_f1


class TestEvaluate:
    def test_perfect(self):
        metrics = evaluate([0, 1, 2, 0], [0, 1, 2, 0])
        assert metrics.accuracy == 1.0
        assert metrics.weighted_f1 == 1.0

    def test_hand_computed_example(self):
        truth = [0, 0, 1, 2]
        preds = [0, 1, 1, 2]
        metrics = evaluate(preds, truth)
        assert metrics.accuracy == 0.75
        expected_f1 = 0.5 * (2 / 3) + 0.25 * (2 / 3) + 0.25 * 1.0
        assert metrics.weighted_f1 == pytest.approx(expected_f1, abs=1e-12)

    def test_directional_accuracy_slice(self):
        truth = [0, 1, 2, 0, 1]
        preds = [0, 0, 0, 2, 1]
        # rows where both sides are directional: (0,0), (0,1), (1,1)
        metrics = evaluate(preds, truth)
        assert metrics.directional_accuracy == pytest.approx(2 / 3)

    def test_directional_none_when_no_rows(self):
        metrics = evaluate([2, 2, 2], [2, 0, 1])
        assert metrics.directional_accuracy is None

    def test_matches_confusion_oracle_on_random_sets(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(3, 60))
            truth = rng.integers(0, 3, size=n)
            preds = rng.integers(0, 3, size=n)
            metrics = evaluate(preds, truth)
            accuracy, weighted_f1 = confusion_oracle(preds, truth)
            assert abs(metrics.accuracy - accuracy) < 1e-12
            assert abs(metrics.weighted_f1 - weighted_f1) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(AlignmentError):
            evaluate([0, 1], [0])

    def test_empty(self):
        with pytest.raises(AlignmentError):
            evaluate([], [])


class TestSerialization:
    def test_round_trip_bitwise_predictions(self):
        x, y = noisy_set(n=250)
        model = fit(x, y, TrainConfig(rounds=25))
        restored = ensemble_from_json(ensemble_to_json(model))
        assert np.array_equal(predict_proba(restored, x), predict_proba(model, x))
        assert restored.train_loss == model.train_loss
        assert restored.class_weights == model.class_weights

    def test_rejects_foreign_payload(self):
        with pytest.raises(ShapeError):
            ensemble_from_json('{"kind": "something-else"}')
