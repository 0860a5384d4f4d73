"""Supervised comparison model: a one-hidden-layer MLP on raw numeric features,
trained on the same few-shot examples the soft prompt sees."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin

from . import synth
from .errors import Divergence, EmptyTrainSet, InvalidSpec, ShapeMismatch
from .rng import make_rng
from .tasks import TASKS, TaskExample, TaskId

SEQUENCE_ARITY = 32


def task_arity(task) -> int:
    task = TaskId(task)
    if TASKS[task].domain == "cardio":
        return SEQUENCE_ARITY
    if task is TaskId.ACTIVITY_REC:
        return 5
    if task is TaskId.CALORIES:
        return 3
    return len(synth.FEATURES)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    task: TaskId

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (task_arity(self.task),):
            raise ShapeMismatch(f"{TaskId(self.task).value} features need {task_arity(self.task)} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("features must be finite")
        object.__setattr__(self, "values", v)


def featurize(example: TaskExample) -> FeatureVector:
    """Raw numeric features of one example (before normalisation).

    Sequences are truncated or padded to 32 values; padding repeats the
    sequence mean.
    """
    task, x = example.task, example.input_values
    if task is TaskId.CALORIES:
        if not isinstance(x, dict):
            raise ShapeMismatch("calorie example needs a dict payload")
        return FeatureVector([synth.met_value(x["activity"]), float(x["duration_min"]), float(x["weight_lbs"])], task)
    if TASKS[task].domain == "mhealth":
        if not isinstance(x, dict):
            raise ShapeMismatch("wearable example needs a dict payload")
        return FeatureVector([float(x[k]) for k in synth.FEATURES], task)
    seq = np.asarray(x, dtype=float)
    if seq.ndim != 1 or seq.size == 0:
        raise ShapeMismatch(f"{task.value} example needs a non-empty numeric sequence")
    n = task_arity(task)
    if seq.size < n:
        seq = np.concatenate([seq, np.full(n - seq.size, seq.mean())])
    return FeatureVector(seq[:n], task)


def feature_matrix(examples) -> np.ndarray:
    return np.stack([featurize(e).values for e in examples])


class ZScoreNormalizer(TransformerMixin, BaseEstimator):
    """Per-coordinate z-scoring; constant coordinates are only centred."""

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or len(X) == 0:
            raise ShapeMismatch("expected a non-empty 2-d feature matrix")
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.mean_.shape[0]:
            raise ShapeMismatch(f"expected {self.mean_.shape[0]} features, got shape {X.shape}")
        return (X - self.mean_) / self.scale_


@dataclass(frozen=True)
class MlpConfig:
    hidden_width: int = 256
    epochs: int = 500
    learning_rate: float = 0.003
    seed: int = 0

    def __post_init__(self):
        if self.hidden_width < 1 or self.epochs < 0 or not self.learning_rate > 0:
            raise InvalidSpec("hidden_width >= 1, epochs >= 0 and learning_rate > 0 required")

    def to_dict(self) -> dict:
        return asdict(self)


class _Mlp(BaseEstimator):
    """Shared full-batch gradient-descent machinery (float64, ReLU)."""

    def __init__(self, hidden_width: int = 256, epochs: int = 500, learning_rate: float = 0.003, seed: int = 0):
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    def _init_params(self, n_in: int, n_out: int):
        rng = make_rng(self.seed, "mlp", n_in, n_out, self.hidden_width)
        self.W1_ = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, self.hidden_width))
        self.b1_ = np.zeros(self.hidden_width)
        self.W2_ = rng.normal(0.0, np.sqrt(1.0 / self.hidden_width), (self.hidden_width, n_out))
        self.b2_ = np.zeros(n_out)

    def _forward(self, X):
        h = np.maximum(X @ self.W1_ + self.b1_, 0.0)
        return h, h @ self.W2_ + self.b2_

    def _loss_grad(self, X, Y):
        raise NotImplementedError

    def _train(self, X, Y):
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            h, out = self._forward(X)
            loss, d_out = self._loss_grad(out, Y)
            if not np.isfinite(loss):
                raise Divergence(f"MLP loss became non-finite at epoch {epoch}")
            self.loss_curve_.append(float(loss))
            d_h = (d_out @ self.W2_.T) * (h > 0)
            self.W2_ -= self.learning_rate * (h.T @ d_out)
            self.b2_ -= self.learning_rate * d_out.sum(axis=0)
            self.W1_ -= self.learning_rate * (X.T @ d_h)
            self.b1_ -= self.learning_rate * d_h.sum(axis=0)
        return self

    def _check_X(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None]
        if X.shape[1] != self.W1_.shape[0]:
            raise ShapeMismatch(f"expected {self.W1_.shape[0]} features, got {X.shape[1]}")
        return X

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in (self.W1_, self.b1_, self.W2_, self.b2_):
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


class MlpClassifier(ClassifierMixin, _Mlp):
    """Softmax cross-entropy head. Ties in the logits go to the lowest class index."""

    def __init__(self, hidden_width: int = 256, epochs: int = 500, learning_rate: float = 0.003, seed: int = 0,
                 classes=None):
        super().__init__(hidden_width, epochs, learning_rate, seed)
        self.classes = classes

    def _loss_grad(self, out, Y):
        z = out - out.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        n = len(Y)
        loss = -np.log(p[np.arange(n), Y] + 1e-300).mean()
        p[np.arange(n), Y] -= 1.0
        return loss, p / n

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            raise EmptyTrainSet("no training shots")
        self.classes_ = np.asarray(self.classes if self.classes is not None else sorted(set(y)), dtype=object)
        index = {c: i for i, c in enumerate(self.classes_)}
        Y = np.asarray([index[v] for v in y])
        self._init_params(X.shape[1], len(self.classes_))
        return self._train(X, Y)

    def decision_function(self, X):
        return self._forward(self._check_X(X))[1]

    def predict(self, X):
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def training_accuracy(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y, dtype=object)))


class MlpRegressor(RegressorMixin, _Mlp):
    """Scalar head trained on standardised targets with mean squared error."""

    def _loss_grad(self, out, Y):
        diff = out[:, 0] - Y
        return float(np.mean(diff ** 2)), (2.0 * diff / len(Y))[:, None]

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(X) == 0:
            raise EmptyTrainSet("no training shots")
        self.y_mean_ = float(y.mean())
        self.y_scale_ = float(y.std()) or 1.0
        self._init_params(X.shape[1], 1)
        return self._train(X, (y - self.y_mean_) / self.y_scale_)

    def predict(self, X):
        return self._forward(self._check_X(X))[1][:, 0] * self.y_scale_ + self.y_mean_


@dataclass
class TrainedBaseline:
    task: TaskId
    normalizer: ZScoreNormalizer
    model: _Mlp
    config: MlpConfig

    @property
    def is_classifier(self) -> bool:
        return isinstance(self.model, MlpClassifier)

    def predict_examples(self, examples) -> list:
        return list(predict_mlp(self, feature_matrix(examples)))


def baseline_target(example: TaskExample, phq_mode: str = "class"):
    if example.task is TaskId.PHQ_SCORE:
        return example.label if phq_mode == "class" else float(example.answer_value)
    return example.answer_value


def train_mlp(shots: list, cfg: MlpConfig = MlpConfig(), phq_mode: str = "class") -> TrainedBaseline:
    """Fit normaliser and MLP on the few-shot examples of one task."""
    if not shots:
        raise EmptyTrainSet("no training shots")
    task = shots[0].task
    X = feature_matrix(shots)
    norm = ZScoreNormalizer().fit(X)
    y = [baseline_target(e, phq_mode) for e in shots]
    params = dict(hidden_width=cfg.hidden_width, epochs=cfg.epochs, learning_rate=cfg.learning_rate, seed=cfg.seed)
    classify = TASKS[task].kind == "classification" and not (task is TaskId.PHQ_SCORE and phq_mode == "score")
    if classify:
        model = MlpClassifier(classes=list(TASKS[task].classes), **params)
    else:
        model = MlpRegressor(**params)
    model.fit(norm.transform(X), y)
    return TrainedBaseline(task, norm, model, cfg)


def predict_mlp(trained: TrainedBaseline, features) -> np.ndarray:
    """Class labels (argmax) or regression values for raw feature rows."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[None]
    return trained.model.predict(trained.normalizer.transform(X))


def evaluate_mlp(trained: TrainedBaseline, test: list, phq_mode: str = "class") -> tuple[list, dict]:
    """Per-example prediction records and the task metric on ``test``."""
    from . import evalkit

    preds = trained.predict_examples(test)
    targets = [baseline_target(e, phq_mode) for e in test]
    if trained.is_classifier:
        preds = [str(p) for p in preds]
        acc, _, fail = evalkit.accuracy_counts(preds, targets).percentages()
        score = {"metric_name": "accuracy", "metric_value": float(acc), "failure_rate": float(fail), "n": len(test)}
    else:
        preds = [float(p) for p in preds]
        score = {"metric_name": "mae", "metric_value": evalkit.mae(preds, targets), "failure_rate": 0.0,
                 "n": len(test)}
    records = [{"example_id": e.example_id, "prediction": p, "target": t} for e, p, t in zip(test, preds, targets)]
    return records, score
