"""Minimal multiclass models over flat parameter vectors.

Two architectures: a softmax-linear classifier and a one-hidden-layer
ReLU MLP.  All parameters live in a single 1-D float64 vector so that
updates, sub-models and noise are plain vector arithmetic.

Packing layout (row-major):
  softmax-linear:  W (input_dim x C), b (C)
  mlp-1hidden:     W1 (input_dim x H), b1 (H), W2 (H x C), b2 (C)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

# A parameter vector is a plain 1-D float64 ndarray.
ParameterVector = np.ndarray

SOFTMAX_LINEAR = "softmax-linear"
MLP_1HIDDEN = "mlp-1hidden"

INIT_SCALE = 0.05  # uniform init in [-INIT_SCALE, INIT_SCALE]


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.kind not in (SOFTMAX_LINEAR, MLP_1HIDDEN):
            raise InputError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise InputError("input_dim must be positive")
        if self.num_classes < 2:
            raise InputError("num_classes must be at least 2")
        if self.kind == MLP_1HIDDEN and (self.hidden_dim is None or self.hidden_dim < 1):
            raise InputError("mlp-1hidden requires a positive hidden_dim")

    @property
    def param_count(self) -> int:
        d, c = self.input_dim, self.num_classes
        if self.kind == SOFTMAX_LINEAR:
            return d * c + c
        h = self.hidden_dim
        return d * h + h + h * c + c


@dataclass
class Dataset:
    """Feature matrix plus integer labels in [0, num_classes)."""

    features: np.ndarray  # (n, input_dim) float64
    labels: np.ndarray    # (n,) int
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise InputError("labels must be 1-D and match the sample count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError("labels must lie in [0, num_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int
    learning_rate: float

    def __post_init__(self):
        if self.iterations < 0:
            raise InputError("iterations must be >= 0")
        if self.batch_size < 1:
            raise InputError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")


@dataclass
class PerClassAccuracy:
    """Accuracy per class; nan marks classes absent from the data."""

    accuracy: np.ndarray  # (C,) float, nan where count == 0
    count: np.ndarray     # (C,) int
    overall: float = field(default=float("nan"))


def _unpack_linear(spec: ModelSpec, params: ParameterVector):
    d, c = spec.input_dim, spec.num_classes
    w = params[: d * c].reshape(d, c)
    b = params[d * c:]
    return w, b


def _unpack_mlp(spec: ModelSpec, params: ParameterVector):
    d, h, c = spec.input_dim, spec.hidden_dim, spec.num_classes
    i = 0
    w1 = params[i:i + d * h].reshape(d, h); i += d * h
    b1 = params[i:i + h]; i += h
    w2 = params[i:i + h * c].reshape(h, c); i += h * c
    b2 = params[i:]
    return w1, b1, w2, b2


def _check_params(spec: ModelSpec, params: ParameterVector) -> ParameterVector:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise InputError(
            f"parameter vector has dim {params.shape}, expected ({spec.param_count},)")
    return params


def init_model(spec: ModelSpec, seed: int) -> ParameterVector:
    """Seeded uniform init in [-0.05, 0.05] per entry."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-INIT_SCALE, INIT_SCALE, spec.param_count)


def _logits(spec: ModelSpec, params: ParameterVector, x: np.ndarray) -> np.ndarray:
    if spec.kind == SOFTMAX_LINEAR:
        w, b = _unpack_linear(spec, params)
        return x @ w + b
    w1, b1, w2, b2 = _unpack_mlp(spec, params)
    hidden = np.maximum(x @ w1 + b1, 0.0)
    return hidden @ w2 + b2


def _softmax(logits: np.ndarray) -> np.ndarray:
    # max-subtraction keeps exp() in [0, 1] for any finite input
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(spec: ModelSpec, params: ParameterVector, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a (n, input_dim) batch or a single vector."""
    params = _check_params(spec, params)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise InputError(
            f"feature dim {x.shape[-1]} does not match input_dim {spec.input_dim}")
    return _softmax(_logits(spec, params, x))


def forward(spec: ModelSpec, params: ParameterVector, x: np.ndarray) -> np.ndarray:
    """Probability vector over classes for one sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("forward expects a single feature vector")
    return predict_proba(spec, params, x)


def predict_labels(spec: ModelSpec, params: ParameterVector, x: np.ndarray) -> np.ndarray:
    return np.argmax(predict_proba(spec, params, x), axis=-1)


def cross_entropy_loss(spec: ModelSpec, params: ParameterVector, data: Dataset) -> float:
    """Mean cross-entropy of softmax outputs against the true labels."""
    if len(data) == 0:
        raise InputError("loss over an empty dataset is undefined")
    probs = predict_proba(spec, params, data.features)
    p_true = probs[np.arange(len(data)), data.labels]
    return float(-np.mean(np.log(np.maximum(p_true, 1e-300))))


def _gradient(spec: ModelSpec, params: ParameterVector, x: np.ndarray,
              y: np.ndarray) -> ParameterVector:
    """Mean cross-entropy gradient over the batch, packed like params."""
    n = x.shape[0]
    onehot = np.zeros((n, spec.num_classes))
    onehot[np.arange(n), y] = 1.0
    if spec.kind == SOFTMAX_LINEAR:
        w, b = _unpack_linear(spec, params)
        g_logits = (_softmax(x @ w + b) - onehot) / n
        gw = x.T @ g_logits
        gb = g_logits.sum(axis=0)
        return np.concatenate([gw.ravel(), gb])
    w1, b1, w2, b2 = _unpack_mlp(spec, params)
    z1 = x @ w1 + b1
    h = np.maximum(z1, 0.0)
    g_logits = (_softmax(h @ w2 + b2) - onehot) / n
    gw2 = h.T @ g_logits
    gb2 = g_logits.sum(axis=0)
    gh = (g_logits @ w2.T) * (z1 > 0)
    gw1 = x.T @ gh
    gb1 = gh.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def sgd_step(spec: ModelSpec, params: ParameterVector, batch: Dataset,
             learning_rate: float) -> ParameterVector:
    """One step of batch SGD on cross-entropy: params - lr * mean gradient."""
    params = _check_params(spec, params)
    if len(batch) == 0:
        raise InputError("sgd_step requires a nonempty batch")
    grad = _gradient(spec, params, batch.features, batch.labels)
    return params - learning_rate * grad


def local_train(spec: ModelSpec, w0: ParameterVector, data: Dataset,
                cfg: TrainConfig, rng: np.random.Generator) -> ParameterVector:
    """Run cfg.iterations batch-SGD steps from w0 and return the delta w_I - w_0.

    Each iteration draws a fresh batch of batch_size distinct samples from
    the given stream, so training is a pure function of (w0, data, cfg, rng)
    and splitting the iteration budget across calls that share a stream
    composes exactly.
    """
    w0 = _check_params(spec, w0)
    if len(data) == 0:
        raise InputError("local_train requires nonempty data")
    if cfg.batch_size > len(data):
        raise InputError(
            f"batch_size {cfg.batch_size} exceeds local dataset size {len(data)}")
    w = w0
    for _ in range(cfg.iterations):
        idx = rng.choice(len(data), size=cfg.batch_size, replace=False)
        w = sgd_step(spec, w, data.subset(idx), cfg.learning_rate)
    return w - w0


def evaluate_per_class(spec: ModelSpec, params: ParameterVector,
                       data: Dataset) -> PerClassAccuracy:
    """Per-class accuracy; classes with no samples are nan, not 0."""
    counts = data.class_counts() if len(data) else np.zeros(spec.num_classes, dtype=np.int64)
    acc = np.full(spec.num_classes, np.nan)
    if len(data) == 0:
        return PerClassAccuracy(acc, counts, float("nan"))
    pred = predict_labels(spec, params, data.features)
    correct = pred == data.labels
    for c in range(spec.num_classes):
        mask = data.labels == c
        if counts[c] > 0:
            acc[c] = correct[mask].mean()
    return PerClassAccuracy(acc, counts, float(correct.mean()))
