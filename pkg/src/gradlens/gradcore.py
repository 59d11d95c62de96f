"""Dense forward/backward for the attacked model, exact per-sample gradients,
and a small SGD training loop.

Two model families are supported:

* :class:`AttackModel` -- ``x -> ReLU(W x + b) -> head_W h + head_b`` with a
  softmax cross-entropy loss. The first layer is the one a dishonest server
  gets to write.
* :class:`LogisticModel` -- a single dense layer ``x -> W x + b`` trained with
  a one-vs-rest logistic (sigmoid cross-entropy) loss.

All arithmetic is float64. Batch losses are sums, not means; gradients over a
batch are accumulated sample by sample in index order so the summed report is
reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation, NumericError


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(name)
    return arr


def _as_f64(name: str, arr, ndim: int) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    if out.ndim != ndim:
        raise ContractViolation(f"{name} must be {ndim}-d, got shape {out.shape}")
    return _finite(name, out)


@dataclass(frozen=True)
class MaliciousLayer:
    """First dense layer, ``W`` is (n, d) and ``b`` is (n,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _as_f64("weight", self.weight, 2)
        b = _as_f64("bias", self.bias, 1)
        if b.shape[0] != w.shape[0]:
            raise ContractViolation(f"bias length {b.shape[0]} != {w.shape[0]} rows")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def n(self) -> int:
        return self.weight.shape[0]

    @property
    def d(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class AttackModel:
    malicious: MaliciousLayer
    head_weight: np.ndarray
    head_bias: np.ndarray

    def __post_init__(self):
        hw = _as_f64("head_weight", self.head_weight, 2)
        hb = _as_f64("head_bias", self.head_bias, 1)
        if hw.shape[1] != self.malicious.n:
            raise ContractViolation(
                f"head expects {hw.shape[1]} hidden units, layer has {self.malicious.n}"
            )
        if hb.shape[0] != hw.shape[0]:
            raise ContractViolation("head_bias length must equal head rows")
        object.__setattr__(self, "head_weight", hw)
        object.__setattr__(self, "head_bias", hb)

    @property
    def input_dim(self) -> int:
        return self.malicious.d

    @property
    def neuron_count(self) -> int:
        return self.malicious.n

    @property
    def class_count(self) -> int:
        return self.head_weight.shape[0]

    @property
    def has_tied_head(self) -> bool:
        """True when every hidden unit feeds the head through the same column."""
        return bool(np.all(self.head_weight == self.head_weight[:, :1]))

    def parameters(self) -> tuple[np.ndarray, ...]:
        return (self.malicious.weight, self.malicious.bias, self.head_weight, self.head_bias)

    def replace(self, params: Sequence[np.ndarray]) -> "AttackModel":
        w, b, hw, hb = params
        return AttackModel(MaliciousLayer(w, b), hw, hb)


@dataclass(frozen=True)
class LogisticModel:
    """Single dense layer with k sigmoid outputs."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _as_f64("weight", self.weight, 2)
        b = _as_f64("bias", self.bias, 1)
        if b.shape[0] != w.shape[0]:
            raise ContractViolation(f"bias length {b.shape[0]} != {w.shape[0]} rows")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def class_count(self) -> int:
        return self.weight.shape[0]

    neuron_count = class_count

    def parameters(self) -> tuple[np.ndarray, ...]:
        return (self.weight, self.bias)

    def replace(self, params: Sequence[np.ndarray]) -> "LogisticModel":
        w, b = params
        return LogisticModel(w, b)


Model = AttackModel | LogisticModel


@dataclass(frozen=True)
class GradientReport:
    """Batch-summed gradients, the only thing a client uploads.

    For a :class:`LogisticModel` the head fields are ``None`` and ``dW``/``db``
    refer to the single class layer.
    """

    dW: np.ndarray
    db: np.ndarray
    head_dW: np.ndarray | None
    head_db: np.ndarray | None
    batch_size: int

    def gradients(self) -> tuple[np.ndarray, ...]:
        if self.head_dW is None:
            return (self.dW, self.db)
        return (self.dW, self.db, self.head_dW, self.head_db)

    @classmethod
    def from_gradients(cls, grads: Sequence[np.ndarray], batch_size: int) -> "GradientReport":
        if len(grads) == 2:
            return cls(grads[0], grads[1], None, None, batch_size)
        return cls(grads[0], grads[1], grads[2], grads[3], batch_size)

    def scaled(self, factor: float) -> "GradientReport":
        return GradientReport.from_gradients([g * factor for g in self.gradients()], self.batch_size)


@dataclass(frozen=True)
class SampleGradient:
    dW: np.ndarray
    db: np.ndarray
    head_dW: np.ndarray | None
    head_db: np.ndarray | None
    loss: float

    def gradients(self) -> tuple[np.ndarray, ...]:
        if self.head_dW is None:
            return (self.dW, self.db)
        return (self.dW, self.db, self.head_dW, self.head_db)


def init_model(d: int, n: int, k: int, rng: np.random.Generator) -> AttackModel:
    """He-initialised two-layer model, zero biases."""
    w = rng.normal(0.0, np.sqrt(2.0 / d), size=(n, d))
    hw = rng.normal(0.0, np.sqrt(2.0 / n), size=(k, n))
    return AttackModel(MaliciousLayer(w, np.zeros(n)), hw, np.zeros(k))


def _check_input(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.input_dim:
        raise ContractViolation(f"input length {x.shape[0]} != model input dim {model.input_dim}")
    return _finite("input", x)


def forward(model: Model, x) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(preacts, logits)`` for one flattened input.

    For a :class:`LogisticModel` both entries are the class pre-activations.
    """
    x = _check_input(model, x)
    # overflow surfaces as NumericError naming the tensor, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        if isinstance(model, LogisticModel):
            z = _finite("logits", model.weight @ x + model.bias)
            return z, z
        pre = _finite("preacts", model.malicious.weight @ x + model.malicious.bias)
        hidden = np.maximum(pre, 0.0)
        logits = _finite("logits", model.head_weight @ hidden + model.head_bias)
    return pre, logits


def _softmax_xent(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    shift = logits - logits.max()
    log_z = np.log(np.exp(shift).sum())
    probs = np.exp(shift - log_z)
    loss = float(log_z - shift[label])
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad


def _sigmoid_xent(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    target = np.zeros_like(logits)
    target[label] = 1.0
    # log(1 + e^z) - y z, written with logaddexp to stay finite for large |z|
    loss = float(np.sum(np.logaddexp(0.0, logits) - target * logits))
    probs = np.exp(-np.logaddexp(0.0, -logits))
    return loss, probs - target


def backward_per_sample(model: Model, x, label: int) -> SampleGradient:
    x = _check_input(model, x)
    label = int(label)
    if not 0 <= label < model.class_count:
        raise ContractViolation(f"label {label} outside [0, {model.class_count})")

    if isinstance(model, LogisticModel):
        z = _finite("logits", model.weight @ x + model.bias)
        loss, dz = _sigmoid_xent(z, label)
        _finite("loss", np.array(loss))
        return SampleGradient(np.outer(dz, x), dz, None, None, loss)

    pre = _finite("preacts", model.malicious.weight @ x + model.malicious.bias)
    hidden = np.maximum(pre, 0.0)
    logits = _finite("logits", model.head_weight @ hidden + model.head_bias)
    loss, dlogits = _softmax_xent(logits, label)
    _finite("loss", np.array(loss))
    dhidden = model.head_weight.T @ dlogits
    # subgradient of ReLU at exactly 0 is 0
    dpre = np.where(pre > 0.0, dhidden, 0.0)
    return SampleGradient(
        dW=_finite("dW", np.outer(dpre, x)),
        db=dpre,
        head_dW=_finite("head_dW", np.outer(dlogits, hidden)),
        head_db=dlogits,
        loss=loss,
    )


def batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a ``LabeledBatch`` (or an ``(inputs, labels)`` pair) to arrays."""
    if hasattr(batch, "images"):
        inputs = np.stack([np.asarray(img.pixels, dtype=np.float64).reshape(-1) for img in batch.images])
        labels = np.asarray(batch.labels, dtype=np.int64)
    else:
        inputs, labels = batch
        inputs = np.asarray(inputs, dtype=np.float64)
        inputs = inputs.reshape(inputs.shape[0], -1)
        labels = np.asarray(labels, dtype=np.int64)
    if inputs.shape[0] == 0:
        raise ContractViolation("batch is empty")
    if labels.shape[0] != inputs.shape[0]:
        raise ContractViolation("inputs and labels differ in length")
    return inputs, labels


def per_sample_gradients(model: Model, batch) -> list[SampleGradient]:
    inputs, labels = batch_arrays(batch)
    return [backward_per_sample(model, x, y) for x, y in zip(inputs, labels)]


def backward_summed(model: Model, batch) -> GradientReport:
    """Sum of per-sample gradients, accumulated in batch order."""
    samples = per_sample_gradients(model, batch)
    acc = [g.copy() for g in samples[0].gradients()]
    for s in samples[1:]:
        for a, g in zip(acc, s.gradients()):
            a += g
    return GradientReport.from_gradients(acc, len(samples))


def batch_loss(model: Model, batch) -> float:
    inputs, labels = batch_arrays(batch)
    total = 0.0
    for x, y in zip(inputs, labels):
        _, logits = forward(model, x)
        if isinstance(model, LogisticModel):
            total += _sigmoid_xent(logits, int(y))[0]
        else:
            total += _softmax_xent(logits, int(y))[0]
    return total


def sgd_step(model: Model, report: GradientReport, eta: float) -> Model:
    """``p <- p - eta * g`` for every parameter; ``report`` is used as given."""
    if eta < 0:
        raise ContractViolation("learning rate must be non-negative")
    params = model.parameters()
    grads = report.gradients()
    if len(params) != len(grads):
        raise ContractViolation("report does not match model structure")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {p.shape}")
    return model.replace([p - eta * g for p, g in zip(params, grads)])


def predict(model: Model, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64).reshape(len(inputs), -1)
    return np.array([int(np.argmax(forward(model, x)[1])) for x in inputs], dtype=np.int64)


def train_eval(
    train,
    test,
    epochs: int,
    eta: float,
    suite=None,
    seed: int = 0,
    *,
    hidden: int = 32,
    batch_size: int = 16,
    class_count: int | None = None,
) -> float:
    """Mini-batch SGD on ``train``, returning accuracy on ``test``.

    When ``suite`` is given every mini-batch is expanded with that suite's
    transforms (augmented copies keep their origin's label). Each step uses
    the mean gradient over the expanded batch so the step size does not grow
    with the suite.
    """
    from .defense import LabeledBatch, build_augmented_batch

    if len(train.images) == 0 or len(test.images) == 0:
        raise ContractViolation("train and test sets must be nonempty")
    if epochs < 0:
        raise ContractViolation("epochs must be >= 0")
    rng = np.random.default_rng(seed)
    d = train.images[0].pixels.size
    k = class_count or int(max(max(train.labels), max(test.labels))) + 1
    model = init_model(d, hidden, k, rng)

    for _ in range(epochs):
        order = rng.permutation(len(train.images))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch = LabeledBatch([train.images[i] for i in idx], [train.labels[i] for i in idx])
            if suite is not None and suite.transforms:
                batch = build_augmented_batch(batch, suite).expanded
            report = backward_summed(model, batch)
            model = sgd_step(model, report.scaled(1.0 / report.batch_size), eta)

    inputs, labels = batch_arrays(test)
    return float(np.mean(predict(model, inputs) == labels))
