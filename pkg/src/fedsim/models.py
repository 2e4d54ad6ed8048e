"""The two classifiers the simulator trains, with hand-derived gradients.

Both models end in a softmax over classes and are trained on mean
cross-entropy (mean, not sum, so changing the batch size does not rescale
the learning rate). Gradients are the exact analytic ones: the fused
softmax/cross-entropy gradient ``probs - one_hot`` averaged over the
batch, backpropagated through the ReLU hidden layer for the MLP.

Canonical variable order:
  SoftmaxRegression: W [input_dim x classes], b [classes]
  Mlp:               W1 [input_dim x hidden], b1 [hidden],
                     W2 [hidden x classes],   b2 [classes]

Weights are initialized Glorot-uniform in [-s, s], s = sqrt(6/(fan_in +
fan_out)); biases start at zero. Accuracy breaks argmax ties toward the
lowest class index. The ReLU gradient at exactly 0 is 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .tensor import DTYPE, ShapeError, Tensor, softmax_rows


class LabelError(ValueError):
    """A label lies outside [0, num_classes)."""


@dataclass(frozen=True)
class SoftmaxRegression:
    input_dim: int
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError(f"invalid spec: {self}")


@dataclass(frozen=True)
class Mlp:
    input_dim: int
    hidden_units: int
    num_classes: int

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_units < 1 or self.num_classes < 2:
            raise ValueError(f"invalid spec: {self}")


ModelSpec = SoftmaxRegression | Mlp


def param_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list for a model spec."""
    if isinstance(spec, SoftmaxRegression):
        return [("W", (spec.input_dim, spec.num_classes)), ("b", (spec.num_classes,))]
    return [
        ("W1", (spec.input_dim, spec.hidden_units)),
        ("b1", (spec.hidden_units,)),
        ("W2", (spec.hidden_units, spec.num_classes)),
        ("b2", (spec.num_classes,)),
    ]


@dataclass(frozen=True)
class Variable:
    name: str
    tensor: Tensor


@dataclass(frozen=True)
class ModelParams:
    """Ordered, uniquely named list of variables."""

    variables: tuple[Variable, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def tensor(self, name: str) -> Tensor:
        for v in self.variables:
            if v.name == name:
                return v.tensor
        raise KeyError(name)

    def element_count(self) -> int:
        return sum(v.tensor.size for v in self.variables)

    def map_arrays(self, fn) -> "ModelParams":
        """New params with fn applied to each variable's array."""
        return ModelParams(
            tuple(Variable(v.name, Tensor._wrap(fn(v.tensor.array))) for v in self.variables)
        )


@dataclass(frozen=True)
class Batch:
    """Inputs in [0, 1] with integer labels, one row per example."""

    inputs: Tensor
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        if len(self.inputs.shape) != 2:
            raise ShapeError(f"batch inputs must be n x d, got {self.inputs.shape}")
        if labels.ndim != 1 or len(labels) != self.inputs.shape[0]:
            raise ShapeError("one label per input row required")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Evaluation:
    loss: float
    accuracy: float


def init_params(spec: ModelSpec, stream: rng.RngStream) -> ModelParams:
    """Fresh parameters: Glorot-uniform weights, zero biases."""
    variables = []
    for name, shape in param_shapes(spec):
        if len(shape) == 2:
            fan_in, fan_out = shape
            s = math.sqrt(6.0 / (fan_in + fan_out))
            flat = rng.uniform(stream.child(name), -s, s, fan_in * fan_out)
            variables.append(Variable(name, Tensor(flat.data, shape)))
        else:
            variables.append(Variable(name, Tensor(np.zeros(shape, dtype=DTYPE))))
    return ModelParams(tuple(variables))


def _check_batch(spec: ModelSpec, params: ModelParams, batch: Batch) -> None:
    if batch.inputs.shape[1] != spec.input_dim:
        raise ShapeError(
            f"batch width {batch.inputs.shape[1]} does not match input_dim {spec.input_dim}"
        )
    if len(batch.labels) and (batch.labels.min() < 0 or batch.labels.max() >= spec.num_classes):
        raise LabelError(f"labels must lie in [0, {spec.num_classes})")
    expected = param_shapes(spec)
    got = [(v.name, v.tensor.shape) for v in params.variables]
    if got != expected:
        raise ShapeError(f"params {got} do not match spec {expected}")


def _probs(spec: ModelSpec, params: ModelParams, inputs: np.ndarray):
    """Forward pass; returns (probs, relu pre-activation, hidden) arrays."""
    if isinstance(spec, SoftmaxRegression):
        w, b = (v.tensor.array for v in params.variables)
        logits = inputs @ w + b
        probs = softmax_rows(Tensor._wrap(logits)).array
        return probs, None, None
    w1, b1, w2, b2 = (v.tensor.array for v in params.variables)
    z1 = inputs @ w1 + b1
    hidden = np.maximum(z1, DTYPE(0.0))
    logits = hidden @ w2 + b2
    probs = softmax_rows(Tensor._wrap(logits)).array
    return probs, z1, hidden


def _loss_accuracy(probs: np.ndarray, labels: np.ndarray) -> Evaluation:
    n = len(labels)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(picked)))
    accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    return Evaluation(loss=loss, accuracy=accuracy)


def forward_loss(spec: ModelSpec, params: ModelParams, batch: Batch) -> Evaluation:
    """Mean cross-entropy and fraction of correct argmax predictions."""
    _check_batch(spec, params, batch)
    probs, _, _ = _probs(spec, params, batch.inputs.array)
    return _loss_accuracy(probs, batch.labels)


def loss_and_grads(
    spec: ModelSpec, params: ModelParams, batch: Batch
) -> tuple[Evaluation, ModelParams]:
    """One fused forward/backward pass: metrics plus analytic gradients."""
    _check_batch(spec, params, batch)
    inputs = batch.inputs.array
    labels = batch.labels
    n = len(labels)
    probs, z1, hidden = _probs(spec, params, inputs)
    metrics = _loss_accuracy(probs, labels)

    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= DTYPE(1.0)
    d_logits /= DTYPE(n)

    if isinstance(spec, SoftmaxRegression):
        grads = (
            Variable("W", Tensor._wrap(inputs.T @ d_logits)),
            Variable("b", Tensor._wrap(d_logits.sum(axis=0))),
        )
        return metrics, ModelParams(grads)

    w2 = params.tensor("W2").array
    d_hidden = d_logits @ w2.T
    d_z1 = d_hidden * (z1 > 0)
    grads = (
        Variable("W1", Tensor._wrap(inputs.T @ d_z1)),
        Variable("b1", Tensor._wrap(d_z1.sum(axis=0))),
        Variable("W2", Tensor._wrap(hidden.T @ d_logits)),
        Variable("b2", Tensor._wrap(d_logits.sum(axis=0))),
    )
    return metrics, ModelParams(grads)


def backward(spec: ModelSpec, params: ModelParams, batch: Batch) -> ModelParams:
    """Analytic gradient of the mean cross-entropy, shaped like the params."""
    _, grads = loss_and_grads(spec, params, batch)
    return grads


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    """w' = w - lr * g, coordinate-wise."""
    if params.names != grads.names:
        raise ShapeError(f"gradient names {grads.names} do not match params {params.names}")
    out = []
    for v, g in zip(params.variables, grads.variables):
        if v.tensor.shape != g.tensor.shape:
            raise ShapeError(f"{v.name}: shape {g.tensor.shape} does not match {v.tensor.shape}")
        out.append(Variable(v.name, Tensor._wrap(v.tensor.array - DTYPE(lr) * g.tensor.array)))
    return ModelParams(tuple(out))


_EVAL_CHUNK = 8192


def evaluate(spec: ModelSpec, params: ModelParams, data) -> Evaluation:
    """Mean loss/accuracy over a whole dataset (anything with inputs/labels).

    Datasets that fit in one chunk take the exact forward_loss path, so the
    two agree exactly in that case.
    """
    n = data.inputs.shape[0]
    if n < 1:
        raise ValueError("cannot evaluate an empty dataset")
    if n <= _EVAL_CHUNK:
        return forward_loss(spec, params, Batch(data.inputs, data.labels))
    loss_sum = 0.0
    hit_sum = 0.0
    for start in range(0, n, _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, n)
        chunk = Batch(
            Tensor._wrap(data.inputs.array[start:stop]), np.asarray(data.labels)[start:stop]
        )
        ev = forward_loss(spec, params, chunk)
        loss_sum += ev.loss * (stop - start)
        hit_sum += ev.accuracy * (stop - start)
    return Evaluation(loss=loss_sum / n, accuracy=hit_sum / n)


def _loss_f64(spec: ModelSpec, arrays: list[np.ndarray], inputs: np.ndarray, labels: np.ndarray) -> float:
    # Independent float64 recompute of the forward loss, used as the
    # finite-difference reference.
    if isinstance(spec, SoftmaxRegression):
        w, b = arrays
        logits = inputs @ w + b
    else:
        w1, b1, w2, b2 = arrays
        hidden = np.maximum(inputs @ w1 + b1, 0.0)
        logits = hidden @ w2 + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.mean(log_probs[np.arange(len(labels)), labels]))


def finite_difference_check(
    spec: ModelSpec,
    params: ModelParams,
    batch: Batch,
    h: float = 1e-3,
    grads: ModelParams | None = None,
) -> dict[str, float]:
    """Max relative error per variable between analytic and central
    finite-difference gradients (loss recomputed in float64, step h).

    Relative error uses a unit floor: |a - fd| / max(1, |a|, |fd|).
    ``grads`` defaults to the analytic backward pass; passing a perturbed
    gradient makes this a negative control.
    """
    if grads is None:
        grads = backward(spec, params, batch)
    inputs = batch.inputs.array.astype(np.float64)
    labels = batch.labels
    arrays = [v.tensor.array.astype(np.float64) for v in params.variables]
    errors: dict[str, float] = {}
    for vi, gvar in enumerate(grads.variables):
        analytic = gvar.tensor.array.reshape(-1)
        flat = arrays[vi].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss_f64(spec, arrays, inputs, labels)
            flat[i] = orig - h
            down = _loss_f64(spec, arrays, inputs, labels)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            a = float(analytic[i])
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            worst = max(worst, err)
        errors[gvar.name] = worst
    return errors
