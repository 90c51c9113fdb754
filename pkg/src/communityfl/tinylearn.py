"""Minimal supervised-learning core used by the federated rounds.

Two model families are supported: multinomial logistic regression and a
one-hidden-layer tanh MLP. Both are small enough that analytic gradients can
be checked against finite differences, and every operation is deterministic
given its explicit seeds.

Weight layout is canonical so aggregation and serialization are unambiguous:
for each layer, the row-major weight matrix comes first, then its bias
vector. All arithmetic is float64 with summations in fixed index order.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass

import numpy as np

from .errors import ConfigError, ShapeError

INIT_SCALE = 0.05


@dataclass(frozen=True)
class ModelArch:
    """Shape of a model: inputs, outputs, and optional hidden layer.

    ``hidden_units == 0`` means plain logistic regression. ``arch_id`` is the
    canonical parseable identifier produced by :func:`make_arch`, so a weight
    vector tagged with it is self-describing.
    """

    arch_id: str
    n_features: int
    n_classes: int
    hidden_units: int = 0

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 1 or self.hidden_units < 0:
            raise ConfigError(f"invalid model dimensions: {self}")
        if self.arch_id != _canonical_arch_id(self.n_features, self.n_classes, self.hidden_units):
            raise ConfigError(f"arch_id {self.arch_id!r} does not match dimensions")

    @property
    def param_count(self) -> int:
        f, c, h = self.n_features, self.n_classes, self.hidden_units
        if h == 0:
            return f * c + c
        return (f * h + h) + (h * c + c)


def _canonical_arch_id(n_features: int, n_classes: int, hidden_units: int) -> str:
    if hidden_units == 0:
        return f"logreg:{n_features}x{n_classes}"
    return f"mlp:{n_features}x{hidden_units}x{n_classes}"


def make_arch(n_features: int, n_classes: int, hidden_units: int = 0) -> ModelArch:
    """Build a ModelArch with its canonical ``arch_id``."""
    return ModelArch(
        arch_id=_canonical_arch_id(n_features, n_classes, hidden_units),
        n_features=n_features,
        n_classes=n_classes,
        hidden_units=hidden_units,
    )


def arch_from_id(arch_id: str) -> ModelArch:
    """Recover the full architecture from a canonical identifier string."""
    try:
        family, dims = arch_id.split(":", 1)
        parts = [int(p) for p in dims.split("x")]
        if family == "logreg" and len(parts) == 2:
            return make_arch(parts[0], parts[1], 0)
        if family == "mlp" and len(parts) == 3:
            return make_arch(parts[0], parts[2], parts[1])
    except (ValueError, ConfigError) as exc:
        raise ShapeError(f"unparseable arch_id {arch_id!r}") from exc
    raise ShapeError(f"unparseable arch_id {arch_id!r}")


@dataclass(eq=False)
class WeightVector:
    """Flat float64 parameter vector tagged with its architecture id.

    Values must be finite; ``check_finite=False`` is reserved for the wire
    decode path, where hostile non-finite updates must be representable so
    the transfer guard can flag them instead of the decoder crashing.
    """

    values: np.ndarray
    arch_id: str
    check_finite: InitVar[bool] = True

    def __post_init__(self, check_finite: bool):
        # own a copy so freezing it never flips flags on a caller's array
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 1:
            raise ShapeError(f"weights must be 1-D, got shape {values.shape}")
        if check_finite and not np.all(np.isfinite(values)):
            raise ShapeError("weights contain non-finite values")
        arch = arch_from_id(self.arch_id)
        if values.size != arch.param_count:
            raise ShapeError(
                f"{self.arch_id} expects {arch.param_count} parameters, got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def arch(self) -> ModelArch:
        return arch_from_id(self.arch_id)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(eq=False)
class Dataset:
    """Local supervised data: feature matrix plus integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, order="C")
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ShapeError("labels must be 1-D and aligned with features")
        if features.shape[0] < 1:
            raise ShapeError("dataset must contain at least one sample")
        if not np.all(np.isfinite(features)):
            raise ShapeError("features contain non-finite values")
        if self.n_classes < 1:
            raise ShapeError("n_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ShapeError("labels out of range [0, n_classes)")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class HyperParams:
    """Mini-batch SGD settings for one local training call."""

    epochs: int
    batch_size: int
    learning_rate: float
    shuffle_seed: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass(frozen=True)
class TrainStats:
    final_loss: float
    n_samples: int


@dataclass(frozen=True)
class EvalMetrics:
    loss: float
    accuracy: float
    n_samples: int


def _unpack(values: np.ndarray, arch: ModelArch):
    f, c, h = arch.n_features, arch.n_classes, arch.hidden_units
    if h == 0:
        w = values[: f * c].reshape(f, c)
        b = values[f * c :]
        return (w, b)
    o1 = f * h
    o2 = o1 + h
    o3 = o2 + h * c
    return (
        values[:o1].reshape(f, h),
        values[o1:o2],
        values[o2:o3].reshape(h, c),
        values[o3:],
    )


def _forward(values: np.ndarray, arch: ModelArch, x: np.ndarray):
    """Return (logits, hidden activations or None)."""
    if arch.hidden_units == 0:
        w, b = _unpack(values, arch)
        return x @ w + b, None
    w1, b1, w2, b2 = _unpack(values, arch)
    hidden = np.tanh(x @ w1 + b1)
    return hidden @ w2 + b2, hidden


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_shapes(w: WeightVector, data: Dataset) -> ModelArch:
    arch = w.arch
    if data.n_features != arch.n_features or data.n_classes != arch.n_classes:
        raise ShapeError(
            f"data ({data.n_features} features, {data.n_classes} classes) does not "
            f"match {w.arch_id}"
        )
    return arch


def init_weights(arch: ModelArch, seed: int) -> WeightVector:
    """Deterministic initialization: uniform(-0.05, 0.05) weights, zero biases."""
    rng = np.random.default_rng(seed)
    f, c, h = arch.n_features, arch.n_classes, arch.hidden_units
    values = np.zeros(arch.param_count, dtype=np.float64)
    if h == 0:
        values[: f * c] = rng.uniform(-INIT_SCALE, INIT_SCALE, f * c)
    else:
        o1 = f * h
        o2 = o1 + h
        values[:o1] = rng.uniform(-INIT_SCALE, INIT_SCALE, o1)
        values[o2 : o2 + h * c] = rng.uniform(-INIT_SCALE, INIT_SCALE, h * c)
    return WeightVector(values=values, arch_id=arch.arch_id)


def loss_and_gradient(w: WeightVector, data: Dataset) -> tuple[float, np.ndarray]:
    """Full-batch mean cross-entropy loss and its analytic gradient.

    The loss uses the log-sum-exp form, so it is finite for any finite inputs
    and smooth enough for finite-difference checks.
    """
    arch = _check_shapes(w, data)
    x, y = data.features, data.labels
    n = data.n_samples
    logits, hidden = _forward(w.values, arch, x)
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(n), y].mean())

    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grad = np.empty_like(w.values)
    f, c, h = arch.n_features, arch.n_classes, arch.hidden_units
    if h == 0:
        grad[: f * c] = (x.T @ dlogits).reshape(-1)
        grad[f * c :] = dlogits.sum(axis=0)
    else:
        w1, b1, w2, b2 = _unpack(w.values, arch)
        dw2 = hidden.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dhidden = (dlogits @ w2.T) * (1.0 - hidden**2)
        dw1 = x.T @ dhidden
        db1 = dhidden.sum(axis=0)
        o1 = f * h
        o2 = o1 + h
        o3 = o2 + h * c
        grad[:o1] = dw1.reshape(-1)
        grad[o1:o2] = db1
        grad[o2:o3] = dw2.reshape(-1)
        grad[o3:] = db2
    return loss, grad


def train_local(w: WeightVector, data: Dataset, hp: HyperParams) -> tuple[WeightVector, TrainStats]:
    """Mini-batch SGD on cross-entropy; deterministic given ``hp.shuffle_seed``."""
    arch = _check_shapes(w, data)
    rng = np.random.default_rng(hp.shuffle_seed)
    n = data.n_samples
    values = w.values.copy()
    current = WeightVector(values=values, arch_id=arch.arch_id)
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            batch = Dataset(
                features=data.features[idx], labels=data.labels[idx], n_classes=data.n_classes
            )
            _, grad = loss_and_gradient(current, batch)
            current = WeightVector(
                values=current.values - hp.learning_rate * grad, arch_id=arch.arch_id
            )
    final_loss, _ = loss_and_gradient(current, data)
    return current, TrainStats(final_loss=final_loss, n_samples=n)


def evaluate(w: WeightVector, data: Dataset) -> EvalMetrics:
    """Mean cross-entropy and top-1 accuracy; pure function of its inputs."""
    arch = _check_shapes(w, data)
    x, y = data.features, data.labels
    n = data.n_samples
    logits, _ = _forward(w.values, arch, x)
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(n), y].mean())
    accuracy = float((logits.argmax(axis=1) == y).mean())
    return EvalMetrics(loss=loss, accuracy=accuracy, n_samples=n)
