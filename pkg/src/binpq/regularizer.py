"""Binarization penalty, barrier schedule and regularized training.

The penalty ``sum |w - 1| * |w + 1|`` is zero exactly when every weight is
-1 or +1. Its weight ``alpha`` starts small and is multiplied by a constant
``c`` after every mini-batch update, so the pull towards binary values grows
as training proceeds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, NumericOverflowError, TrainingDivergedError
from .nn import (
    Dataset,
    Network,
    TrainConfig,
    backward,
    data_loss,
    evaluate,
    forward,
    minibatches,
    sgd_step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BarrierState:
    alpha: float
    c: float = 1.001
    iteration: int = 0


@dataclass(frozen=True)
class RegularizedCost:
    data: float
    penalty: float
    alpha: float

    @property
    def total(self) -> float:
        return self.data + self.alpha * self.penalty


def penalty(W) -> float:
    W = np.asarray(W, dtype=np.float64)
    return float(np.sum(np.abs(W - 1) * np.abs(W + 1)))


def penalty_gradient(W) -> np.ndarray:
    """Entry-wise (sub)gradient of ``|w^2 - 1|``; zero at exactly +-1."""
    W = np.asarray(W)
    return 2 * W * np.sign(W * W - 1)


def barrier_step(state: BarrierState) -> BarrierState:
    return BarrierState(state.alpha * state.c, state.c, state.iteration + 1)


def binarization_progress(W, eps: float) -> float:
    """Fraction of entries within ``eps`` of -1 or +1."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    W = np.asarray(W)
    if W.size == 0:
        return 1.0
    dist = np.minimum(np.abs(W - 1), np.abs(W + 1))
    return float(np.mean(dist <= eps))


def harden(W) -> np.ndarray:
    """Project onto {-1, +1} by sign; zero maps to +1."""
    W = np.asarray(W)
    return np.where(W < 0, -1, 1).astype(W.dtype if W.dtype.kind == "f" else np.float32)


def harden_layers(net: Network, indices) -> Network:
    out = net
    for i in sorted(set(indices)):
        out = out.with_weights(i, harden(net.layers[i].weights))
    return out


def regularized_cost(net: Network, data: Dataset, alpha: float, layers) -> RegularizedCost:
    out = forward(net, data.inputs)[-1]
    return RegularizedCost(
        data=float(np.mean(data_loss(out, data.targets))),
        penalty=sum(penalty(net.layers[i].weights) for i in sorted(layers)),
        alpha=alpha,
    )


@dataclass
class TraceRow:
    epoch: int
    data_loss: float
    penalty: float
    alpha: float
    test_error: float
    progress: dict = field(default_factory=dict)

    def as_row(self, layers) -> list:
        return [self.epoch, self.data_loss, self.penalty, self.alpha, self.test_error] + [
            self.progress[i] for i in layers
        ]


def trace_header(layers) -> list[str]:
    return ["epoch", "data_loss", "penalty", "alpha", "test_error"] + [
        f"progress_layer{i}" for i in layers
    ]


def train_regularized(
    net: Network,
    data: Dataset,
    cfg: TrainConfig,
    test: Dataset | None = None,
    progress_eps: float = 0.1,
):
    """Mini-batch SGD on data loss + alpha * penalty over ``cfg.regularized_layers``.

    alpha follows the barrier schedule once per mini-batch. Returns the
    trained network and a per-epoch trace. Progress is reported for every
    layer; ``test_error`` is NaN when no ``test`` set is given.
    """
    cfg.validate_for(net)
    if len(data) == 0:
        raise EmptyInputError("cannot train on an empty dataset")
    reg = sorted(cfg.regularized_layers)
    rng = np.random.default_rng(cfg.seed)
    state = BarrierState(cfg.alpha0, cfg.c)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in minibatches(len(data), cfg.batch_size, rng):
            acts = forward(net, data.inputs[idx])
            total += float(data_loss(acts[-1], data.targets[idx]).sum())
            grads = backward(net, acts, data.targets[idx])
            for i in reg:
                dw, db = grads[i]
                grads[i] = (dw + state.alpha * penalty_gradient(net.layers[i].weights), db)
            try:
                net = sgd_step(net, grads, cfg.learning_rate)
            except NumericOverflowError as exc:
                raise TrainingDivergedError(epoch) from exc
            state = barrier_step(state)
        mean_loss = total / len(data)
        pen = sum(penalty(net.layers[i].weights) for i in reg)
        if not (np.isfinite(mean_loss) and np.isfinite(pen)):
            raise TrainingDivergedError(epoch)
        row = TraceRow(
            epoch=epoch,
            data_loss=mean_loss,
            penalty=pen,
            alpha=state.alpha,
            test_error=evaluate(net, test) if test is not None else float("nan"),
            progress={
                i: binarization_progress(layer.weights, progress_eps)
                for i, layer in enumerate(net.layers)
            },
        )
        log.info(
            "epoch %d loss %.4f penalty %.1f alpha %.3g test_error %.4f",
            epoch, row.data_loss, row.penalty, row.alpha, row.test_error,
        )
        trace.append(row)
    return net, trace
