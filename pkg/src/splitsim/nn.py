"""Dense feed-forward network split into head, backbone and tail segments.

The model mirrors a U-shaped split deployment: the client owns the first
(head) and last (tail) few layers, the server owns the middle (backbone).
The composed function is ordinary matrix arithmetic, so everything here is
plain numpy with analytic gradients; there is no autograd dependency.

Conventions
-----------
* A layer computes ``act(x @ W.T + b)`` with ``W`` of shape ``(out, in)``.
* Hidden layers use ReLU, the final tail layer emits identity logits.
* All operations are pure: they return new values and never mutate their
  arguments (training loops rebuild the model each step).
* Backbone parameters flatten layer-major, each layer contributing its
  weight matrix in row-major order followed by its bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, InputError

_ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    """One fully connected layer: ``act(x @ weights.T + biases)``."""

    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray   # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise InputError("layer weights must be a 2-D matrix")
        if self.biases.shape != (self.weights.shape[0],):
            raise InputError("bias length must match the layer output width")
        if self.activation not in _ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class SplitModel:
    """Head, backbone and tail layer lists with matching interface widths."""

    head: list[DenseLayer]
    backbone: list[DenseLayer]
    tail: list[DenseLayer]

    def __post_init__(self):
        chain = self.layers()
        if not chain:
            raise ConfigError("split model needs at least one layer")
        if not self.backbone:
            raise ConfigError("split model needs a nonempty backbone")
        for first, second in zip(chain, chain[1:]):
            if first.out_dim != second.in_dim:
                raise ConfigError(
                    f"segment width mismatch: {first.out_dim} feeds {second.in_dim}"
                )

    @property
    def cut_config(self) -> tuple[int, int, int]:
        """Layer counts per segment, identifying where the model is cut."""
        return (len(self.head), len(self.backbone), len(self.tail))

    def layers(self) -> list[DenseLayer]:
        return list(self.head) + list(self.backbone) + list(self.tail)

    def copy(self) -> "SplitModel":
        return SplitModel(
            [l.copy() for l in self.head],
            [l.copy() for l in self.backbone],
            [l.copy() for l in self.tail],
        )


@dataclass
class ForwardTrace:
    """Per-layer pre-activations and activations for one batch.

    ``head``/``backbone``/``tail`` hold ``(pre_activation, activation)``
    pairs in layer order; ``inputs`` is the batch fed to the first head
    layer. The trace carries everything backprop needs.
    """

    inputs: np.ndarray
    head: list[tuple[np.ndarray, np.ndarray]]
    backbone: list[tuple[np.ndarray, np.ndarray]]
    tail: list[tuple[np.ndarray, np.ndarray]]

    @property
    def logits(self) -> np.ndarray:
        return self.tail[-1][1]


@dataclass
class GradientSet:
    """Loss gradients mirroring the model layout: (dW, db) per layer."""

    head: list[tuple[np.ndarray, np.ndarray]]
    backbone: list[tuple[np.ndarray, np.ndarray]]
    tail: list[tuple[np.ndarray, np.ndarray]]


@dataclass
class RegularizerSpec:
    """Additive penalty on the flattened backbone used by adaptive attacks.

    ``penalty`` maps the flattened backbone vector to ``(value, gradient)``.
    The combined objective is ``alpha * classification + (1 - alpha) *
    penalty``; ``alpha = 1`` reduces to the plain classification loss.
    """

    alpha: float
    penalty: Callable[[np.ndarray], tuple[float, np.ndarray]]
    label: str = ""

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("regularizer weight must lie in [0, 1]")


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def init_model(
    input_dim: int,
    num_classes: int,
    head_width: int = 32,
    backbone_hidden: int = 64,
    backbone_layers: int = 2,
    seed: int | np.random.Generator = 0,
) -> SplitModel:
    """Build the default architecture with seeded uniform initialization.

    Head: one ReLU layer ``input_dim -> head_width``. Backbone: a chain of
    ``backbone_layers`` ReLU layers routed ``head_width -> backbone_hidden
    -> ... -> head_width`` (a single layer maps ``head_width -> head_width``).
    Tail: one identity layer ``head_width -> num_classes`` emitting logits.

    Weights draw uniformly from ``+-sqrt(6 / (fan_in + fan_out))``; biases
    start at zero. The same seed always yields the same model.
    """
    if input_dim < 1 or num_classes < 2:
        raise ConfigError("model needs input_dim >= 1 and num_classes >= 2")
    if not 1 <= backbone_layers <= 4:
        raise ConfigError("backbone depth must lie in 1..4")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def dense(fan_in, fan_out, activation):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        return DenseLayer(weights, np.zeros(fan_out), activation)

    backbone_widths = [head_width] + [backbone_hidden] * (backbone_layers - 1) + [head_width]
    backbone = [
        dense(backbone_widths[i], backbone_widths[i + 1], "relu")
        for i in range(backbone_layers)
    ]
    return SplitModel(
        head=[dense(input_dim, head_width, "relu")],
        backbone=backbone,
        tail=[dense(head_width, num_classes, "identity")],
    )


def forward_split(model: SplitModel, inputs: np.ndarray) -> ForwardTrace:
    """Run one batch through head, backbone and tail, recording the trace."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise InputError("inputs must be a (batch, features) matrix")
    if inputs.shape[1] != model.head[0].in_dim:
        raise InputError(
            f"input width {inputs.shape[1]} does not match head width "
            f"{model.head[0].in_dim}"
        )

    segments: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {
        "head": [], "backbone": [], "tail": []
    }
    current = inputs
    for name, layers in (("head", model.head), ("backbone", model.backbone),
                         ("tail", model.tail)):
        for layer in layers:
            pre = current @ layer.weights.T + layer.biases
            current = _activate(pre, layer.activation)
            segments[name].append((pre, current))
    return ForwardTrace(inputs, segments["head"], segments["backbone"], segments["tail"])


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    batch = logits.shape[0]
    picked = probs[np.arange(batch), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs.copy()
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


def loss_and_backward(
    model: SplitModel,
    trace: ForwardTrace,
    labels: np.ndarray,
    attack_regularizer: RegularizerSpec | None = None,
) -> tuple[float, GradientSet]:
    """Compute the training loss and exact gradients for every parameter.

    Without a regularizer the loss is the mean softmax cross-entropy.
    With one, it is ``alpha * class_loss + (1 - alpha) * penalty`` where
    the penalty acts on the flattened backbone only, so head and tail
    gradients are simply scaled by ``alpha``.
    """
    labels = np.asarray(labels)
    logits = trace.logits
    if labels.shape != (logits.shape[0],):
        raise InputError("labels must be one integer per batch row")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise InputError("label outside the class range")

    class_loss, dlogits = softmax_cross_entropy(logits, labels)
    alpha = 1.0 if attack_regularizer is None else attack_regularizer.alpha

    layer_list = model.layers()
    pairs = list(trace.head) + list(trace.backbone) + list(trace.tail)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layer_list)

    upstream = alpha * dlogits
    for i in range(len(layer_list) - 1, -1, -1):
        layer = layer_list[i]
        pre, _ = pairs[i]
        layer_input = trace.inputs if i == 0 else pairs[i - 1][1]
        dpre = upstream * _activation_grad(pre, layer.activation)
        grads[i] = (dpre.T @ layer_input, dpre.sum(axis=0))
        if i > 0:
            upstream = dpre @ layer.weights

    n_head, n_backbone, _ = model.cut_config
    grad_set = GradientSet(
        head=grads[:n_head],
        backbone=grads[n_head:n_head + n_backbone],
        tail=grads[n_head + n_backbone:],
    )

    total = class_loss
    if attack_regularizer is not None:
        value, flat_grad = attack_regularizer.penalty(flatten_backbone(model))
        total = alpha * class_loss + (1.0 - alpha) * value
        extra = _unflatten_pairs(model.backbone, (1.0 - alpha) * flat_grad)
        grad_set.backbone = [
            (gw + ew, gb + eb)
            for (gw, gb), (ew, eb) in zip(grad_set.backbone, extra)
        ]
    return total, grad_set


def sgd_step(model: SplitModel, grads: GradientSet, lr: float) -> SplitModel:
    """Return a new model stepped by ``-lr * grad`` on every parameter."""
    def step(layers, layer_grads):
        out = []
        for layer, (gw, gb) in zip(layers, layer_grads):
            if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
                raise RuntimeError("gradient shape does not match the model")
            out.append(DenseLayer(layer.weights - lr * gw,
                                  layer.biases - lr * gb,
                                  layer.activation))
        return out

    return SplitModel(
        head=step(model.head, grads.head),
        backbone=step(model.backbone, grads.backbone),
        tail=step(model.tail, grads.tail),
    )


def flatten_backbone(model: SplitModel) -> np.ndarray:
    """Flatten backbone parameters: per layer, row-major weights then biases."""
    parts = []
    for layer in model.backbone:
        parts.append(layer.weights.ravel())
        parts.append(layer.biases)
    return np.concatenate(parts)


def backbone_size(model: SplitModel) -> int:
    return sum(l.weights.size + l.biases.size for l in model.backbone)


def _unflatten_pairs(backbone: list[DenseLayer], vec: np.ndarray):
    """Split a flat vector into per-layer (weight, bias) arrays."""
    vec = np.asarray(vec, dtype=np.float64)
    expected = sum(l.weights.size + l.biases.size for l in backbone)
    if vec.shape != (expected,):
        raise InputError(f"flat backbone must have length {expected}")
    pairs, cursor = [], 0
    for layer in backbone:
        w = vec[cursor:cursor + layer.weights.size].reshape(layer.weights.shape)
        cursor += layer.weights.size
        b = vec[cursor:cursor + layer.biases.size]
        cursor += layer.biases.size
        pairs.append((w, b))
    return pairs

def unflatten_backbone(model: SplitModel, vec: np.ndarray) -> list[DenseLayer]:
    """Rebuild backbone layers from a flat vector (inverse of flatten)."""
    return [
        DenseLayer(w.copy(), b.copy(), layer.activation)
        for layer, (w, b) in zip(model.backbone, _unflatten_pairs(model.backbone, vec))
    ]
