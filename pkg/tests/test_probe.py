"""Linear probe: softmax/CE oracles, gradient checks, training contracts."""

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from lmmprobe import (FusionStrategy, LinearProbeClassifier, ProbeModel,
                      TrainConfig, TrainTrace, accuracy, cross_entropy,
                      format_percent, load_checkpoint, loss_gradient, predict,
                      save_checkpoint, softmax, train)
from lmmprobe.probe import TrainingDivergedError


def softmax_decimal_oracle(logits, precision=50):
    """Softmax computed in 50-digit decimal arithmetic."""
    getcontext().prec = precision
    values = [Decimal(float(z)) for z in logits]
    exps = [v.exp() for v in values]
    total = sum(exps)
    return np.array([float(e / total) for e in exps])


def cross_entropy_per_sample_oracle(logits, labels):
    """Mean of per-sample -log softmax[true], computed one row at a time."""
    total = 0.0
    for row, label in zip(np.atleast_2d(logits), np.atleast_1d(labels)):
        probs = np.exp(row - row.max())
        probs = probs / probs.sum()
        total += -math.log(probs[label])
    return total / len(np.atleast_1d(labels))


def finite_difference_gradient(model, X, y, h=1e-5):
    """Central-difference gradient of the mean cross-entropy."""
    def loss_at(weights, bias):
        return cross_entropy(X @ weights.T + bias, y)

    grad_w = np.zeros_like(model.weights)
    for i in range(model.weights.shape[0]):
        for j in range(model.weights.shape[1]):
            up = model.weights.copy()
            down = model.weights.copy()
            up[i, j] += h
            down[i, j] -= h
            grad_w[i, j] = (loss_at(up, model.bias)
                            - loss_at(down, model.bias)) / (2 * h)
    grad_b = np.zeros_like(model.bias)
    for i in range(model.bias.shape[0]):
        up = model.bias.copy()
        down = model.bias.copy()
        up[i] += h
        down[i] -= h
        grad_b[i] = (loss_at(model.weights, up)
                     - loss_at(model.weights, down)) / (2 * h)
    return grad_w, grad_b


def random_model(gen, num_classes, dim):
    return ProbeModel(
        weights=gen.normal(size=(num_classes, dim)),
        bias=gen.normal(size=num_classes),
        class_names=[str(c) for c in range(num_classes)],
    )


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)

    def test_huge_logit_no_overflow(self):
        probs = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(probs))
        assert probs[0] == pytest.approx(1.0, abs=1e-12)
        assert probs[1] == pytest.approx(0.0, abs=1e-12)

    def test_matches_extended_precision_oracle(self, rng):
        for _ in range(20):
            logits = rng.normal(scale=3.0, size=10)
            expected = softmax_decimal_oracle(logits)
            assert np.max(np.abs(softmax(logits) - expected)) <= 1e-12

    def test_sums_to_one(self, rng):
        logits = rng.normal(scale=100.0, size=(200, 7))
        sums = softmax(logits).sum(axis=1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12

    def test_shift_invariance(self, rng):
        logits = rng.normal(size=12)
        for shift in (-500.0, -1.0, 3.0, 250.0):
            np.testing.assert_allclose(softmax(logits + shift),
                                       softmax(logits), atol=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            softmax([np.inf, 0.0])


class TestCrossEntropy:
    def test_uniform_two_class_is_ln2(self):
        assert cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2),
                                                             abs=1e-12)

    def test_confident_correct_approaches_zero(self):
        # Correct-class logit -> +inf limit drives the loss to 0.
        losses = [cross_entropy([margin, 0.0], 0)
                  for margin in (5.0, 20.0, 100.0)]
        assert losses == sorted(losses, reverse=True)
        assert losses[-1] < 1e-12
        assert all(loss >= 0 for loss in losses)

    def test_batch_mean_matches_per_sample_oracle(self, rng):
        logits = rng.normal(size=(3, 5))
        labels = rng.integers(0, 5, size=3)
        expected = cross_entropy_per_sample_oracle(logits, labels)
        assert cross_entropy(logits, labels) == pytest.approx(expected,
                                                              abs=1e-12)

    def test_index_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy([0.0, 0.0], 2)

    def test_extreme_logits_stay_finite(self):
        assert np.isfinite(cross_entropy([1000.0, -1000.0], 1))


class TestLossGradient:
    def test_perfect_prediction_limit_vanishes(self):
        # With a huge correct-class logit, p ~= onehot and the gradient ~ 0.
        model = ProbeModel(weights=np.array([[50.0, 0.0], [-50.0, 0.0]]),
                           bias=np.zeros(2), class_names=["a", "b"])
        grad_w, grad_b = loss_gradient(model, np.array([[1.0, 1.0]]), [0])
        assert np.max(np.abs(grad_w)) < 1e-12
        assert np.max(np.abs(grad_b)) < 1e-12

    def test_matches_finite_differences(self, rng):
        model = random_model(rng, num_classes=3, dim=7)
        X = rng.normal(size=(5, 7))
        y = rng.integers(0, 3, size=5)
        grad_w, grad_b = loss_gradient(model, X, y)
        fd_w, fd_b = finite_difference_gradient(model, X, y)
        scale = np.maximum(np.abs(fd_w), 1e-8)
        assert np.max(np.abs(grad_w - fd_w) / scale) <= 1e-4
        scale_b = np.maximum(np.abs(fd_b), 1e-8)
        assert np.max(np.abs(grad_b - fd_b) / scale_b) <= 1e-4

    def test_duplicated_batch_same_gradient(self, rng):
        model = random_model(rng, num_classes=4, dim=6)
        X = rng.normal(size=(8, 6))
        y = rng.integers(0, 4, size=8)
        once = loss_gradient(model, X, y)
        twice = loss_gradient(model, np.vstack([X, X]), np.hstack([y, y]))
        np.testing.assert_allclose(once[0], twice[0], atol=1e-15)
        np.testing.assert_allclose(once[1], twice[1], atol=1e-15)

    def test_dim_mismatch_rejected(self, rng):
        model = random_model(rng, num_classes=2, dim=3)
        with pytest.raises(ValueError, match="dim"):
            loss_gradient(model, rng.normal(size=(2, 5)), [0, 1])


def make_blobs(gen, n_per_class=50, offset=4.0, sigma=0.5):
    """Two 2-d Gaussian blobs whose centers sit offset apart per axis."""
    a = gen.normal(scale=sigma, size=(n_per_class, 2))
    b = gen.normal(scale=sigma, size=(n_per_class, 2)) + offset
    X = np.vstack([a, b])
    y = np.repeat([0, 1], n_per_class)
    return X, y


class TestTrain:
    def test_separable_blobs_hit_full_train_accuracy(self, rng):
        X, y = make_blobs(rng)
        config = TrainConfig(epochs=500, learning_rate=1e-3)
        model, trace = train(X, y, config)
        assert accuracy(model, X, y) == 1.0
        assert len(trace) == 500

    def test_single_sample_single_class(self):
        X = np.array([[0.5, -0.25]])
        model, trace = train(X, [0], TrainConfig(epochs=1),
                             class_names=["only"])
        assert predict(model, X[0]) == 0
        assert len(trace) == 1

    def test_deterministic_given_seed(self, rng):
        X, y = make_blobs(rng, n_per_class=30)
        config = TrainConfig(epochs=40, seed=9, batch_size=16)
        model_a, trace_a = train(X, y, config)
        model_b, trace_b = train(X, y, config)
        assert model_a.weights.tobytes() == model_b.weights.tobytes()
        assert model_a.bias.tobytes() == model_b.bias.tobytes()
        np.testing.assert_array_equal(trace_a.train_loss, trace_b.train_loss)
        np.testing.assert_array_equal(trace_a.test_accuracy,
                                      trace_b.test_accuracy)

    def test_different_seed_shuffles_differently(self, rng):
        X, y = make_blobs(rng, n_per_class=30)
        model_a, _ = train(X, y, TrainConfig(epochs=20, seed=0, batch_size=16))
        model_b, _ = train(X, y, TrainConfig(epochs=20, seed=1, batch_size=16))
        assert model_a.weights.tobytes() != model_b.weights.tobytes()

    def test_plain_gd_full_batch_loss_non_increasing(self, rng):
        X, y = make_blobs(rng, n_per_class=25)
        config = TrainConfig(epochs=60, learning_rate=1e-4, optimizer="sgd",
                             batch_size=len(y), shuffle=False)
        _, trace = train(X, y, config)
        diffs = np.diff(trace.train_loss)
        assert np.all(diffs <= 1e-15)

    def test_eval_set_recorded_per_epoch(self, rng):
        X, y = make_blobs(rng, n_per_class=20)
        X_test, y_test = make_blobs(rng, n_per_class=10)
        _, trace = train(X, y, TrainConfig(epochs=30),
                         eval_set=(X_test, y_test))
        assert len(trace.test_accuracy) == 30
        assert np.all((trace.test_accuracy >= 0) & (trace.test_accuracy <= 1))

    def test_empty_train_set_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            train(np.empty((0, 3)), [], TrainConfig(epochs=1))

    def test_divergence_aborts_with_diagnostic(self, rng):
        X = rng.normal(size=(10, 2)) * 1e150
        y = rng.integers(0, 2, size=10)
        with pytest.raises((TrainingDivergedError, ValueError)):
            config = TrainConfig(epochs=5, learning_rate=1e300,
                                 optimizer="sgd")
            train(X * 1e150, y, config)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="lbfgs")

    def test_defaults_match_published_protocol(self):
        config = TrainConfig()
        assert config.epochs == 500
        assert config.learning_rate == pytest.approx(0.001)

    def test_accepts_fused_feature_sequences(self, rng):
        from lmmprobe import FusedFeature, fuse

        X, y = make_blobs(rng, n_per_class=15)
        features = [fuse(row, row, FusionStrategy.MEAN, sample_id=str(i))
                    for i, row in enumerate(X)]
        model, _ = train(features, y, TrainConfig(epochs=500, seed=0))
        assert model.strategy is FusionStrategy.MEAN
        assert accuracy(model, features, y) == 1.0
        assert predict(model, features[0]) in (0, 1)
        mixed = [features[0],
                 FusedFeature(values=X[1], strategy=FusionStrategy.CONCAT)]
        with pytest.raises(ValueError, match="mixed fusion strategies"):
            train(mixed, [0, 1], TrainConfig(epochs=1))


class TestPredictAccuracy:
    def test_counting(self, rng):
        model = ProbeModel(weights=np.eye(2), bias=np.zeros(2),
                           class_names=["a", "b"])
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        assert accuracy(model, X, [0, 1, 0, 1]) == 1.0
        assert accuracy(model, X, [0, 1, 1, 0]) == 0.5

    def test_exact_tie_takes_lowest_index(self):
        model = ProbeModel(weights=np.zeros((3, 2)), bias=np.zeros(3),
                           class_names=["a", "b", "c"])
        for _ in range(5):
            assert predict(model, np.array([1.0, 2.0])) == 0

    def test_partial_tie_takes_lowest_tied_index(self):
        model = ProbeModel(weights=np.array([[0.0, 0.0], [1.0, 0.0],
                                             [1.0, 0.0]]),
                           bias=np.zeros(3), class_names=["a", "b", "c"])
        assert predict(model, np.array([1.0, 0.0])) == 1

    def test_argmax_invariant_to_positive_rescale(self, rng):
        model = random_model(rng, num_classes=5, dim=4)
        X = rng.normal(size=(20, 4))
        base = predict(model, X)
        for c in (1e-6, 0.5, 3.0, 1e6):
            scaled = ProbeModel(weights=c * model.weights, bias=c * model.bias,
                                class_names=model.class_names)
            np.testing.assert_array_equal(predict(scaled, X), base)

    def test_empty_eval_set_rejected(self, rng):
        model = random_model(rng, num_classes=2, dim=2)
        with pytest.raises(ValueError):
            accuracy(model, np.empty((0, 2)), [])

    def test_percent_formatting(self):
        assert format_percent(0.91753) == "91.753"
        assert format_percent(0.0) == "0.000"
        assert format_percent(1.0) == "100.000"
        assert format_percent(0.5) == "50.000"

    def test_percent_rounds_half_even(self):
        # Exact decimal ties land on the even neighbor under the same
        # quantization rule format_percent uses.
        assert Decimal("91.1125").quantize(Decimal("0.001")) == Decimal("91.112")
        assert Decimal("91.1135").quantize(Decimal("0.001")) == Decimal("91.114")
        assert format_percent(0.9111150000000001) == "91.112"


class TestTraceAndCheckpoint:
    def test_trace_csv_round_trip_bit_exact(self, tmp_path, rng):
        trace = TrainTrace(np.arange(1, 8),
                           rng.normal(size=7) ** 2,
                           rng.uniform(0, 1, size=7))
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        loaded = TrainTrace.from_csv(path)
        assert loaded.train_loss.tobytes() == trace.train_loss.tobytes()
        assert loaded.test_accuracy.tobytes() == trace.test_accuracy.tobytes()

    def test_trace_validates_accuracy_range(self):
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            TrainTrace(np.array([1]), np.array([0.5]), np.array([1.5]))

    def test_checkpoint_round_trip(self, tmp_path, rng):
        X, y = make_blobs(rng, n_per_class=10)
        model, _ = train(X, y, TrainConfig(epochs=5, seed=2),
                         class_names=["neg", "pos"],
                         strategy=FusionStrategy.CONCAT)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.class_names == ["neg", "pos"]
        assert loaded.strategy is FusionStrategy.CONCAT
        assert loaded.train_config == model.train_config
        # float32 storage, so compare at storage precision
        np.testing.assert_array_equal(
            loaded.weights, model.weights.astype(np.float32).astype(np.float64))

    def test_checkpoint_bytes_deterministic(self, tmp_path, rng):
        X, y = make_blobs(rng, n_per_class=10)
        config = TrainConfig(epochs=5, seed=2)
        model_a, _ = train(X, y, config)
        model_b, _ = train(X, y, config)
        path_a, path_b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model_a, path_a)
        save_checkpoint(model_b, path_b)
        assert path_a.read_bytes() == path_b.read_bytes()

    def test_corrupt_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ValueError, match="bad magic"):
            load_checkpoint(path)


class TestLinearProbeClassifier:
    def test_fit_predict_with_string_labels(self, rng):
        X, y_idx = make_blobs(rng, n_per_class=25)
        y = np.array(["cat", "dog"])[y_idx]
        clf = LinearProbeClassifier(epochs=500, seed=1)
        clf.fit(X, y)
        assert set(clf.predict(X)) <= {"cat", "dog"}
        assert clf.score(X, y) == 1.0
        probs = clf.predict_proba(X)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_sklearn_clone_and_params(self):
        from sklearn.base import clone

        clf = LinearProbeClassifier(epochs=9, learning_rate=0.01, seed=4)
        params = clf.get_params()
        assert params["epochs"] == 9
        assert params["learning_rate"] == 0.01
        cloned = clone(clf)
        assert cloned.get_params() == params

    def test_unfitted_predict_rejected(self, rng):
        with pytest.raises(RuntimeError, match="not fitted"):
            LinearProbeClassifier().predict(rng.normal(size=(2, 2)))
