"""Single linear layer trained with softmax cross-entropy.

Training is deterministic by contract: zero-initialized parameters, a
seeded per-epoch shuffle, and serial batch updates mean an identical
(data, config, seed) triple reproduces the model bit for bit.  The
default optimizer is adaptive-moment ("adam"); plain gradient descent
("sgd") is selectable.  Checkpoints store parameters as little-endian
float32 behind a JSON header; traces are CSV with round-tripping float
formatting.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .fusion import FusionStrategy, FusedFeature
from .validation import as_label_indices, as_matrix

OPTIMIZERS = ("sgd", "adam")

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"FPRB"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sI")  # magic, header byte length


class TrainingDivergedError(RuntimeError):
    """Raised when a non-finite loss or parameter is encountered."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one probe training run."""

    epochs: int = 500
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 256
    seed: int = 0
    shuffle: bool = True
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "shuffle": self.shuffle,
            "weight_decay": self.weight_decay,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: data[k] for k in cls().to_dict() if k in data})


@dataclass
class ProbeModel:
    """Linear layer parameters plus the configuration that produced them."""

    weights: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray     # (num_classes,)
    class_names: list[str]
    strategy: Optional[FusionStrategy] = None
    train_config: Optional[TrainConfig] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} inconsistent with "
                f"{self.weights.shape[0]} classes"
            )
        if len(self.class_names) != self.weights.shape[0]:
            raise ValueError(
                f"{len(self.class_names)} class names for "
                f"{self.weights.shape[0]} weight rows"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("model parameters must be finite")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features) -> np.ndarray:
        X = _as_features(features, self.feature_dim)
        return X @ self.weights.T + self.bias


@dataclass
class TrainTrace:
    """Per-epoch training record: epoch number, train loss, test accuracy."""

    epoch: np.ndarray
    train_loss: np.ndarray
    test_accuracy: np.ndarray

    def __post_init__(self):
        self.epoch = np.asarray(self.epoch, dtype=np.int64)
        self.train_loss = np.asarray(self.train_loss, dtype=np.float64)
        self.test_accuracy = np.asarray(self.test_accuracy, dtype=np.float64)
        n = len(self.epoch)
        if len(self.train_loss) != n or len(self.test_accuracy) != n:
            raise ValueError("trace columns must have equal length")
        if n and (self.test_accuracy.min() < 0 or self.test_accuracy.max() > 1):
            raise ValueError("test_accuracy must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.epoch)

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,test_accuracy"]
        for e, loss, acc in zip(self.epoch, self.train_loss, self.test_accuracy):
            # repr() round-trips float64 exactly through float().
            lines.append(f"{int(e)},{float(loss)!r},{float(acc)!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "TrainTrace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != "epoch,train_loss,test_accuracy":
            raise ValueError(f"{path}: not a trace CSV")
        epochs, losses, accs = [], [], []
        for line in lines[1:]:
            if not line:
                continue
            e, loss, acc = line.split(",")
            epochs.append(int(e))
            losses.append(float(loss))
            accs.append(float(acc))
        return cls(np.array(epochs), np.array(losses), np.array(accs))


# ---------------------------------------------------------------------------
# core math


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    Uses max-subtraction, so logit magnitudes up to 1e3 and beyond cannot
    overflow.  Outputs sum to 1 within 1e-12 and are strictly positive
    whenever the logit spread stays inside float64's exp range (~745).
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("logits must be non-empty")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite entries")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> float:
    """Mean negative log-probability of the true class, from raw logits.

    ``logits`` may be a single (C,) vector with an int label or an (n, C)
    batch with (n,) labels.  Computed through log-sum-exp, never through
    an explicit probability vector, so extreme logits stay finite.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[np.newaxis, :]
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite entries")
    y = as_label_indices(
        np.atleast_1d(labels), z.shape[1], name="labels")
    if len(y) != z.shape[0]:
        raise ValueError(f"{len(y)} labels for {z.shape[0]} logit rows")
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, np.newaxis]).sum(axis=1))
    losses = lse - z[np.arange(len(y)), y]
    return float(losses.mean())


def loss_gradient(model: ProbeModel, features, labels) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of the mean cross-entropy at the model's parameters.

    Per sample the weight gradient is (p - onehot) outer feature and the
    bias gradient is (p - onehot); both are averaged over the batch.
    """
    X = _as_features(features, model.feature_dim)
    y = as_label_indices(np.atleast_1d(labels), model.num_classes, name="labels")
    if len(y) != X.shape[0]:
        raise ValueError(f"{len(y)} labels for {X.shape[0]} feature rows")
    probs = softmax(X @ model.weights.T + model.bias)
    probs[np.arange(len(y)), y] -= 1.0
    n = X.shape[0]
    grad_w = probs.T @ X / n
    grad_b = probs.sum(axis=0) / n
    return grad_w, grad_b


def predict(model: ProbeModel, features):
    """Argmax class index; ties resolve to the lowest index.

    A single feature — a (d,) array or one FusedFeature — returns an
    int; a batch returns an (n,) int array.
    """
    if isinstance(features, FusedFeature):
        features = features.values
    arr = np.asarray(features)
    if arr.dtype == object:  # e.g. a sequence of FusedFeature
        arr = _coerce_features(features)[0]
    arr = arr.astype(np.float64, copy=False)
    single = arr.ndim == 1
    indices = np.argmax(model.logits(arr if not single else arr[np.newaxis, :]), axis=1)
    return int(indices[0]) if single else indices


def accuracy(model: ProbeModel, features, labels) -> float:
    """Fraction of correct argmax predictions, in [0, 1]."""
    X = _as_features(features, model.feature_dim)
    y = as_label_indices(np.atleast_1d(labels), model.num_classes, name="labels")
    if len(y) != X.shape[0]:
        raise ValueError(f"{len(y)} labels for {X.shape[0]} feature rows")
    return float(np.mean(predict(model, X) == y))


def format_percent(fraction: float) -> str:
    """Render a [0, 1] accuracy as a percentage with 3 decimals, half-even."""
    percent = Decimal(float(fraction) * 100.0)
    return str(percent.quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


# ---------------------------------------------------------------------------
# training


def train(features, labels, config: Optional[TrainConfig] = None,
          eval_set: Optional[tuple] = None, *,
          class_names: Optional[Sequence[str]] = None,
          strategy: Optional[FusionStrategy] = None,
          ) -> tuple[ProbeModel, TrainTrace]:
    """Fit the linear layer by minibatch gradient descent on cross-entropy.

    ``features`` is an (n, d) array or a sequence of FusedFeature;
    ``labels`` are int class indices.  ``eval_set`` is an optional
    (features, labels) pair whose accuracy is recorded once per epoch;
    without one the trace's accuracy column is measured on the training
    set.  Returns the final-epoch model (no early stopping) and the
    per-epoch trace.
    """
    if config is None:
        config = TrainConfig()
    X, inferred_strategy = _coerce_features(features)
    if strategy is None:
        strategy = inferred_strategy
    n, dim = X.shape
    if class_names is None:
        num_classes = int(np.max(labels)) + 1
        class_names = [str(i) for i in range(num_classes)]
    class_names = list(class_names)
    num_classes = len(class_names)
    y = as_label_indices(np.atleast_1d(labels), num_classes, name="labels")
    if len(y) != n:
        raise ValueError(f"{len(y)} labels for {n} feature rows")

    if eval_set is not None:
        eval_X, _ = _coerce_features(eval_set[0])
        if eval_X.shape[1] != dim:
            raise ValueError(
                f"eval features have dim {eval_X.shape[1]}, train dim is {dim}"
            )
        eval_y = as_label_indices(
            np.atleast_1d(eval_set[1]), num_classes, name="eval labels")
        if len(eval_y) != eval_X.shape[0]:
            raise ValueError("eval features/labels length mismatch")
    else:
        eval_X, eval_y = X, y

    rng = np.random.default_rng(config.seed)
    weights = np.zeros((num_classes, dim), dtype=np.float64)
    bias = np.zeros(num_classes, dtype=np.float64)
    adam = _AdamState(weights.shape) if config.optimizer == "adam" else None
    lr = config.learning_rate

    epochs = np.arange(1, config.epochs + 1, dtype=np.int64)
    losses = np.empty(config.epochs, dtype=np.float64)
    accs = np.empty(config.epochs, dtype=np.float64)

    # Divergence is detected through the explicit finite check below;
    # numpy's own overflow warnings would only duplicate that diagnostic.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch_idx in range(config.epochs):
            order = rng.permutation(n) if config.shuffle else np.arange(n)
            loss_sum = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                Xb, yb = X[idx], y[idx]
                m = len(idx)

                logits = Xb @ weights.T + bias
                zmax = logits.max(axis=1, keepdims=True)
                expz = np.exp(logits - zmax)
                denom = expz.sum(axis=1, keepdims=True)
                batch_loss = float(np.mean(
                    np.log(denom[:, 0]) + zmax[:, 0]
                    - logits[np.arange(m), yb]
                ))
                if not np.isfinite(batch_loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch_idx + 1}"
                    )
                loss_sum += batch_loss * m

                probs = expz / denom
                probs[np.arange(m), yb] -= 1.0
                grad_w = probs.T @ Xb / m
                grad_b = probs.sum(axis=0) / m
                if config.weight_decay:
                    grad_w = grad_w + config.weight_decay * weights

                if adam is None:
                    weights -= lr * grad_w
                    bias -= lr * grad_b
                else:
                    adam.step(weights, bias, grad_w, grad_b, lr)

            losses[epoch_idx] = loss_sum / n
            eval_pred = np.argmax(eval_X @ weights.T + bias, axis=1)
            accs[epoch_idx] = float(np.mean(eval_pred == eval_y))

    model = ProbeModel(
        weights=weights, bias=bias, class_names=class_names,
        strategy=strategy, train_config=config,
    )
    return model, TrainTrace(epochs, losses, accs)


class _AdamState:
    """Adaptive-moment accumulators for the weight matrix and bias."""

    def __init__(self, weight_shape):
        self.m_w = np.zeros(weight_shape)
        self.v_w = np.zeros(weight_shape)
        self.m_b = np.zeros(weight_shape[0])
        self.v_b = np.zeros(weight_shape[0])
        self.t = 0

    def step(self, weights, bias, grad_w, grad_b, lr):
        self.t += 1
        b1, b2 = _ADAM_BETA1, _ADAM_BETA2
        self.m_w = b1 * self.m_w + (1 - b1) * grad_w
        self.v_w = b2 * self.v_w + (1 - b2) * grad_w * grad_w
        self.m_b = b1 * self.m_b + (1 - b1) * grad_b
        self.v_b = b2 * self.v_b + (1 - b2) * grad_b * grad_b
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        weights -= lr * (self.m_w / c1) / (np.sqrt(self.v_w / c2) + _ADAM_EPS)
        bias -= lr * (self.m_b / c1) / (np.sqrt(self.v_b / c2) + _ADAM_EPS)


def _coerce_features(features) -> tuple[np.ndarray, Optional[FusionStrategy]]:
    """Accept an (n, d) array or a sequence of FusedFeature."""
    if isinstance(features, np.ndarray):
        return as_matrix(features, name="features", dtype=np.float64), None
    seq = list(features) if not isinstance(features, (list, tuple)) else features
    if seq and isinstance(seq[0], FusedFeature):
        strategies = {f.strategy for f in seq}
        if len(strategies) > 1:
            raise ValueError(f"mixed fusion strategies in one batch: {strategies}")
        mat = np.stack([f.values for f in seq]).astype(np.float64)
        return as_matrix(mat, name="features", dtype=np.float64), seq[0].strategy
    return as_matrix(seq, name="features", dtype=np.float64), None


def _as_features(features, expected_dim: int) -> np.ndarray:
    X, _ = _coerce_features(features)
    if X.shape[1] != expected_dim:
        raise ValueError(
            f"features have dim {X.shape[1]}, model expects {expected_dim}"
        )
    return X


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: ProbeModel, path) -> None:
    """Write the model in the canonical checkpoint format.

    Layout: magic ``FPRB``, u32 header byte length, UTF-8 JSON header
    (format version, feature dim, class list, strategy, train config),
    then row-major little-endian float32 weights followed by the bias.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "feature_dim": model.feature_dim,
        "classes": model.class_names,
        "strategy": model.strategy.value if model.strategy else None,
        "train_config": model.train_config.to_dict() if model.train_config else None,
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(model.weights.astype("<f4").tobytes(order="C"))
        fh.write(model.bias.astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> ProbeModel:
    buf = Path(path).read_bytes()
    if len(buf) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: corrupt checkpoint (too short)")
    magic, header_len = _CKPT_HEADER.unpack_from(buf, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: corrupt checkpoint (bad magic {magic!r})")
    offset = _CKPT_HEADER.size
    header = json.loads(buf[offset:offset + header_len].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    offset += header_len
    classes = [str(c) for c in header["classes"]]
    dim = int(header["feature_dim"])
    n_w = len(classes) * dim
    expected = offset + 4 * (n_w + len(classes))
    if len(buf) != expected:
        raise ValueError(f"{path}: truncated checkpoint")
    weights = np.frombuffer(buf, dtype="<f4", count=n_w, offset=offset)
    weights = weights.reshape(len(classes), dim).astype(np.float64)
    offset += 4 * n_w
    bias = np.frombuffer(buf, dtype="<f4", count=len(classes), offset=offset)
    return ProbeModel(
        weights=weights,
        bias=bias.astype(np.float64),
        class_names=classes,
        strategy=(FusionStrategy.parse(header["strategy"])
                  if header.get("strategy") else None),
        train_config=(TrainConfig.from_dict(header["train_config"])
                      if header.get("train_config") else None),
    )


# ---------------------------------------------------------------------------
# sklearn-style wrapper


class LinearProbeClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style front for :func:`train` / :func:`predict`.

    Accepts arbitrary hashable labels; ``classes_`` follows sklearn's
    sorted-unique convention.  ``fit`` is deterministic for a fixed seed.
    """

    def __init__(self, epochs=500, learning_rate=1e-3, optimizer="adam",
                 batch_size=256, seed=0, shuffle=True, weight_decay=0.0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.weight_decay = weight_decay

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate,
            optimizer=self.optimizer, batch_size=self.batch_size,
            seed=self.seed, shuffle=self.shuffle,
            weight_decay=self.weight_decay,
        )

    def fit(self, X, y, eval_set=None):
        y = np.asarray(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if eval_set is not None:
            ev_X, ev_y = eval_set
            lookup = {label: i for i, label in enumerate(self.classes_)}
            ev_idx = np.array([lookup[v] for v in np.asarray(ev_y)])
            eval_set = (ev_X, ev_idx)
        self.model_, self.trace_ = train(
            X, y_idx, self._config(), eval_set,
            class_names=[str(c) for c in self.classes_],
        )
        return self

    def decision_function(self, X):
        self._check_fitted()
        return self.model_.logits(np.asarray(X, dtype=np.float64))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        self._check_fitted()
        indices = predict(self.model_, np.atleast_2d(np.asarray(X, dtype=np.float64)))
        return self.classes_[indices]

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("classifier is not fitted")
