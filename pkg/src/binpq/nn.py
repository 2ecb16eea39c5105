"""Dense feed-forward networks: init, forward/backward, SGD and evaluation.

Weights of layer ``i`` are stored as a ``(fan_in, fan_out)`` matrix so that a
batch of row vectors propagates as ``x @ W + b``. Layer 0 is the input-side
layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    EmptyInputError,
    InvalidArchitectureError,
    NumericOverflowError,
    ShapeError,
)

ACTIVATIONS = ("relu", "sigmoid", "identity")


@dataclass
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidArchitectureError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise InvalidArchitectureError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.shape[1] != b.shape[0]:
                raise ShapeError(
                    f"layer {i} outputs {a.shape[1]} values but layer {i + 1} expects {b.shape[0]}"
                )

    def __len__(self):
        return len(self.layers)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].shape[0]] + [layer.shape[1] for layer in self.layers]

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])

    def astype(self, dtype) -> "Network":
        return Network(
            [
                Layer(l.weights.astype(dtype), l.bias.astype(dtype), l.activation)
                for l in self.layers
            ]
        )

    def with_weights(self, index: int, weights: np.ndarray) -> "Network":
        """Return a shallow copy with layer ``index`` weights replaced."""
        layers = list(self.layers)
        old = layers[index]
        if weights.shape != old.shape:
            raise ShapeError(f"expected weights of shape {old.shape}, got {weights.shape}")
        layers[index] = Layer(weights.astype(old.weights.dtype), old.bias, old.activation)
        return Network(layers)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    classes: int = field(init=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("inputs and targets must be 2-D arrays")
        if len(self.inputs) != len(self.targets):
            raise ShapeError(
                f"{len(self.inputs)} inputs but {len(self.targets)} targets"
            )
        if self.targets.size and not (
            np.all((self.targets == 0) | (self.targets == 1))
            and np.all(self.targets.sum(axis=1) == 1)
        ):
            raise ShapeError("targets must be one-hot vectors")
        self.classes = self.targets.shape[1]

    def __len__(self):
        return len(self.inputs)

    @property
    def labels(self) -> np.ndarray:
        return self.targets.argmax(axis=1)

    def subset(self, index) -> "Dataset":
        return Dataset(self.inputs[index], self.targets[index])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    batch_size: int = 40
    epochs: int = 30
    alpha0: float = 1e-5
    c: float = 1.001
    seed: int = 0
    regularized_layers: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "regularized_layers", frozenset(self.regularized_layers))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be non-negative")
        if self.c < 1:
            raise ValueError("barrier constant c must be >= 1")

    def validate_for(self, net: Network) -> None:
        bad = sorted(i for i in self.regularized_layers if not 0 <= i < len(net))
        if bad:
            raise InvalidArchitectureError(
                f"regularized layer indices {bad} out of range for a {len(net)}-layer network"
            )


def init_network(
    layer_sizes: Sequence[int],
    seed: int,
    hidden_activation: str = "relu",
    output_activation: str = "sigmoid",
    dtype=np.float32,
) -> Network:
    """Glorot-uniform weights, zero biases. Same seed gives an identical network."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 3:
        raise InvalidArchitectureError("need input, at least one hidden and an output size")
    if any(s <= 0 for s in sizes):
        raise InvalidArchitectureError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        act = output_activation if i == len(sizes) - 2 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out, dtype=dtype), act))
    return Network(layers)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "sigmoid":
        # tanh form stays finite for any z
        return 0.5 * (1 + np.tanh(0.5 * z))
    return z


def _activation_grad(kind, a):
    # derivative expressed through the post-activation value
    if kind == "relu":
        return (a > 0).astype(a.dtype)
    if kind == "sigmoid":
        return a * (1 - a)
    return np.ones_like(a)


def forward(net: Network, x) -> list[np.ndarray]:
    """Propagate ``x`` (one vector or a batch of rows) through ``net``.

    Returns the activations of every layer, starting with the input itself;
    the last entry is the network output.
    """
    x = np.asarray(x, dtype=net.dtype)
    if x.shape[-1] != net.layers[0].shape[0] or x.ndim not in (1, 2):
        raise ShapeError(
            f"input of shape {x.shape} does not match input size {net.layers[0].shape[0]}"
        )
    acts = [x]
    for layer in net.layers:
        acts.append(_activate(layer.activation, acts[-1] @ layer.weights + layer.bias))
    return acts


def data_loss(output, target):
    """Euclidean distance between output and target (per row for batches)."""
    output = np.asarray(output)
    target = np.asarray(target)
    if output.shape != target.shape:
        raise ShapeError(f"output shape {output.shape} != target shape {target.shape}")
    return np.linalg.norm(output - target, axis=-1)


def loss_grad(output, target):
    """Gradient of ``data_loss`` w.r.t. the output; zero where output == target."""
    diff = np.atleast_2d(output - target)
    # rescale by the largest entry first so huge residuals do not overflow the norm
    scale = np.abs(diff).max(axis=1, keepdims=True)
    unit = diff / np.where(scale > 0, scale, 1)
    norms = np.linalg.norm(unit, axis=1, keepdims=True)
    return np.where(norms > 0, unit / np.where(norms > 0, norms, 1), 0).astype(diff.dtype)


def backward(net: Network, activations: Sequence[np.ndarray], target):
    """Gradients of the mean data loss w.r.t. every weight matrix and bias.

    Returns a list of ``(dW, db)`` pairs aligned with ``net.layers``.
    """
    if len(activations) != len(net) + 1:
        raise ShapeError("activations do not belong to this network")
    acts = [np.atleast_2d(a) for a in activations]
    for layer, a_in, a_out in zip(net.layers, acts, acts[1:]):
        if a_in.shape[1] != layer.shape[0] or a_out.shape[1] != layer.shape[1]:
            raise ShapeError("stale activations: shapes do not match the network")
    target = np.atleast_2d(np.asarray(target, dtype=net.dtype))
    if target.shape != acts[-1].shape:
        raise ShapeError(f"target shape {target.shape} != output shape {acts[-1].shape}")

    batch = acts[0].shape[0]
    g = loss_grad(acts[-1], target)
    grads = [None] * len(net)
    for i in range(len(net) - 1, -1, -1):
        layer = net.layers[i]
        delta = g * _activation_grad(layer.activation, acts[i + 1])
        grads[i] = (acts[i].T @ delta / batch, delta.sum(axis=0) / batch)
        if i:
            g = delta @ layer.weights.T
    return grads


def sgd_step(net: Network, gradients, learning_rate: float) -> Network:
    if len(gradients) != len(net):
        raise ShapeError("gradient list does not match network depth")
    layers = []
    for layer, (dw, db) in zip(net.layers, gradients):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient shapes do not match the network")
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise NumericOverflowError("non-finite gradient")
        dtype = layer.weights.dtype
        layers.append(
            Layer(
                (layer.weights - learning_rate * dw).astype(dtype, copy=False),
                (layer.bias - learning_rate * db).astype(dtype, copy=False),
                layer.activation,
            )
        )
    return Network(layers)


def predict(net: Network, inputs, chunk: int = 4096) -> np.ndarray:
    """Predicted class per row; argmax ties go to the lowest index."""
    inputs = np.atleast_2d(inputs)
    out = [forward(net, inputs[i : i + chunk])[-1].argmax(axis=1) for i in range(0, len(inputs), chunk)]
    return np.concatenate(out)


def evaluate(net: Network, data: Dataset) -> float:
    """Fraction of misclassified examples."""
    if len(data) == 0:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(net, data.inputs) != data.labels))


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(net: Network, data: Dataset, learning_rate: float, batch_size: int, epochs: int, seed: int):
    """Plain mini-batch SGD on the data loss.

    Returns the trained network and the epoch-averaged training loss per epoch.
    """
    if len(data) == 0:
        raise EmptyInputError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        total = 0.0
        for idx in minibatches(len(data), batch_size, rng):
            acts = forward(net, data.inputs[idx])
            total += float(data_loss(acts[-1], data.targets[idx]).sum())
            net = sgd_step(net, backward(net, acts, data.targets[idx]), learning_rate)
        history.append(total / len(data))
    return net, history
