"""Product quantization of weight matrices.

A matrix ``W`` of shape ``(m, n)`` is split column-wise into ``s`` segments of
width ``n / s``. Each segment's ``m`` rows are clustered with k-means into a
codebook of ``k`` centroids, and every row is replaced by the index of its
nearest centroid. Storage is ``m * s`` indices plus ``k * n`` codebook
entries (32-bit floats, or single bits for a binary codebook).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import CorruptModelError, IndivisibleWidthError, InvalidKError, ShapeError
from .nn import Layer, Network
from .regularizer import harden


def partition(W, s: int) -> list[np.ndarray]:
    W = np.asarray(W)
    if s < 1:
        raise IndivisibleWidthError(f"segment count must be positive, got {s}")
    m, n = W.shape
    if n % s:
        raise IndivisibleWidthError(f"width {n} is not divisible into {s} segments")
    d = n // s
    return [W[:, i * d : (i + 1) * d] for i in range(s)]


def squared_distances(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = rows[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per row; ties go to the lowest index."""
    return squared_distances(rows, centroids).argmin(axis=1)


def kmeans_objective(rows, centroids, labels) -> float:
    rows = np.asarray(rows, dtype=np.float64)
    diff = rows - np.asarray(centroids, dtype=np.float64)[labels]
    return float(np.sum(diff * diff))


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    history: list = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return len(self.history)


def kmeans_plusplus(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding; picks ``k`` rows of ``rows`` as initial centroids."""
    n = len(rows)
    chosen = [int(rng.integers(n))]
    closest = squared_distances(rows, rows[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        closest = np.minimum(closest, squared_distances(rows, rows[idx : idx + 1]).ravel())
    return rows[chosen].copy()


def _repair_empty(rows, centroids, labels, dist):
    """Move the row farthest from its centroid into each empty cluster."""
    counts = np.bincount(labels, minlength=len(centroids))
    dist = dist.copy()
    for j in np.flatnonzero(counts == 0):
        far = int(dist.argmax())
        centroids[j] = rows[far]
        labels[far] = j
        dist[far] = 0.0


def kmeans(rows, k: int, seed=0, max_iter: int = 100, tol: float = 1e-6,
           n_init: int = 10) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding, best of ``n_init`` runs.

    Stops after ``max_iter`` assignment steps or once the relative change of
    the objective drops below ``tol``. The objective recorded after each
    assignment step never increases; a violation raises ``AssertionError``.
    If there are at most ``k`` distinct rows, each becomes a centroid and the
    surplus centroids are set to the mean of all rows. Each of the ``n_init``
    runs starts from a fresh seeding drawn from the same generator; the lowest
    final objective wins (earliest run on ties).
    """
    if k < 1:
        raise InvalidKError(f"k must be positive, got {k}")
    if n_init < 1:
        raise ValueError("n_init must be positive")
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) == 0:
        raise ShapeError("kmeans needs a non-empty 2-D array of rows")

    distinct, first = np.unique(rows, axis=0, return_index=True)
    if len(distinct) <= k:
        centroids = np.repeat(rows.mean(axis=0, keepdims=True), k, axis=0)
        centroids[: len(distinct)] = rows[np.sort(first)]
        labels = assign(rows, centroids)
        return KMeansResult(centroids, labels, kmeans_objective(rows, centroids, labels), [0.0])

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _lloyd(rows, kmeans_plusplus(rows, k, rng), max_iter, tol)
        if best is None or res.objective < best.objective:
            best = res
    return best


def _lloyd(rows, centroids, max_iter, tol) -> KMeansResult:
    k = len(centroids)
    history = []
    while True:
        dist = squared_distances(rows, centroids)
        labels = dist.argmin(axis=1)
        obj = float(dist[np.arange(len(rows)), labels].sum())
        if history:
            prev = history[-1]
            assert obj <= prev * (1 + 1e-12) + 1e-12, f"k-means objective rose {prev} -> {obj}"
        history.append(obj)
        if len(history) >= max_iter:
            break
        if len(history) > 1 and abs(history[-2] - obj) <= tol * max(history[-2], 1e-300):
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, rows)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            d = squared_distances(rows, centroids)[np.arange(len(rows)), labels]
            _repair_empty(rows, centroids, labels, d)
    return KMeansResult(centroids, labels, obj, history)


def index_bits(k: int) -> int:
    """Bits per stored index: ceil(log2 k), 0 for k == 1."""
    return (int(k) - 1).bit_length()


def compression_rate(m: int, n: int, s: int, k: int, binary_codebook: bool = False) -> float:
    """Rate ``32mn / (log2(k) m s + 32 k n)``, or ``32mn / (k n + log2(k) m s)`` for binary codebooks."""
    if k < 2:
        raise InvalidKError(f"compression rate needs k >= 2, got {k}")
    if s < 1 or n % s:
        raise IndivisibleWidthError(f"width {n} is not divisible into {s} segments")
    codebook = k * n if binary_codebook else 32 * k * n
    return 32 * m * n / (math.log2(k) * m * s + codebook)


@dataclass
class QuantizedLayer:
    m: int
    n: int
    s: int
    codebooks: list  # s arrays of shape (k, n // s)
    assignments: np.ndarray  # (m, s) integer indices
    binary_codebook: bool = False

    def __post_init__(self):
        if self.s < 1 or self.n % self.s:
            raise IndivisibleWidthError(f"width {self.n} is not divisible into {self.s} segments")
        if len(self.codebooks) != self.s:
            raise CorruptModelError(f"expected {self.s} codebooks, got {len(self.codebooks)}")
        shapes = {np.shape(c) for c in self.codebooks}
        if len(shapes) != 1 or next(iter(shapes))[1:] != (self.n // self.s,):
            raise CorruptModelError(f"codebook shapes {shapes} do not fit width {self.n // self.s}")
        if np.shape(self.assignments) != (self.m, self.s):
            raise CorruptModelError(
                f"assignments shape {np.shape(self.assignments)} != {(self.m, self.s)}"
            )

    @property
    def k(self) -> int:
        return len(self.codebooks[0])

    @property
    def segment_width(self) -> int:
        return self.n // self.s

    def payload_bits(self) -> tuple[int, int]:
        """(index bits, codebook bits) as stored, padding excluded."""
        return (
            self.m * self.s * index_bits(self.k),
            self.k * self.n * (1 if self.binary_codebook else 32),
        )


def quantize_layer(W, s: int, k: int, seed=0, binary_codebook: bool = False,
                   max_iter: int = 100, tol: float = 1e-6) -> QuantizedLayer:
    """Product-quantize ``W``; binary codebooks harden centroids to +-1 after k-means."""
    W = np.asarray(W)
    m, n = W.shape
    base = [int(x) for x in np.atleast_1d(seed)]
    codebooks, labels = [], []
    for i, seg in enumerate(partition(W, s)):
        res = kmeans(seg, k, seed=base + [i], max_iter=max_iter, tol=tol)
        centroids = res.centroids
        if binary_codebook:
            centroids = harden(centroids)
        centroids = centroids.astype(np.float32)
        codebooks.append(centroids)
        labels.append(assign(np.asarray(seg, dtype=np.float64), centroids.astype(np.float64)))
    return QuantizedLayer(m, n, s, codebooks, np.stack(labels, axis=1), binary_codebook)


def reconstruct(q: QuantizedLayer) -> np.ndarray:
    idx = np.asarray(q.assignments)
    if idx.size and (idx.min() < 0 or idx.max() >= q.k):
        raise CorruptModelError(f"assignment index out of range [0, {q.k})")
    return np.concatenate([q.codebooks[i][idx[:, i]] for i in range(q.s)], axis=1)


@dataclass
class QuantizedDense:
    """A layer whose weight matrix is product-quantized; bias kept dense."""

    q: QuantizedLayer
    bias: np.ndarray
    activation: str

    @property
    def shape(self):
        return (self.q.m, self.q.n)


@dataclass
class QuantizedModel:
    layers: list  # Layer or QuantizedDense

    def __len__(self):
        return len(self.layers)

    def to_network(self) -> Network:
        out = []
        for layer in self.layers:
            if isinstance(layer, QuantizedDense):
                out.append(Layer(reconstruct(layer.q), layer.bias, layer.activation))
            else:
                out.append(layer)
        return Network(out)


@dataclass
class RateAccount:
    original_bits: int
    index_bits: int
    codebook_bits: int
    formula_rate: float
    measured_rate: float
    dense_bits: int = 0

    @property
    def stored_bits(self) -> int:
        return self.index_bits + self.codebook_bits + self.dense_bits


def layer_rate(layer) -> RateAccount:
    if isinstance(layer, QuantizedDense):
        q = layer.q
        ib, cb = q.payload_bits()
        original = 32 * q.m * q.n
        try:
            formula = compression_rate(q.m, q.n, q.s, q.k, q.binary_codebook)
        except InvalidKError:
            formula = float("nan")
        return RateAccount(original, ib, cb, formula, original / (ib + cb))
    m, n = layer.shape
    return RateAccount(32 * m * n, 0, 0, 1.0, 1.0, dense_bits=32 * m * n)


def aggregate_rate(accounts: Sequence[RateAccount]) -> RateAccount:
    """Combine per-layer accounts; the formula side uses each layer's formula denominator."""
    original = sum(a.original_bits for a in accounts)
    formula_den = sum(a.original_bits / a.formula_rate for a in accounts)
    stored = sum(a.stored_bits for a in accounts)
    return RateAccount(
        original,
        sum(a.index_bits for a in accounts),
        sum(a.codebook_bits for a in accounts),
        original / formula_den if formula_den else 1.0,
        original / stored if stored else 1.0,
        dense_bits=sum(a.dense_bits for a in accounts),
    )


LayerParams = Union[tuple, dict]


def quantize_network(net: Network, layers: Sequence[int], params, binary=False, seed=0):
    """Quantize the selected layers of ``net``; others stay dense.

    ``params`` is one ``(s, k)`` pair for every selected layer or a mapping
    ``layer -> (s, k)``; ``binary`` likewise is a bool or a mapping.
    Returns the model, one RateAccount per layer and the whole-model account.
    """
    selected = sorted(set(int(i) for i in layers))
    bad = [i for i in selected if not 0 <= i < len(net)]
    if bad:
        raise IndexError(f"layer indices {bad} out of range for a {len(net)}-layer network")
    out = []
    for i, layer in enumerate(net.layers):
        if i not in selected:
            out.append(layer)
            continue
        s, k = params[i] if isinstance(params, dict) else params
        flag = bool(binary[i] if isinstance(binary, dict) else binary)
        try:
            q = quantize_layer(layer.weights, s, k, seed=[int(seed), i], binary_codebook=flag)
        except IndivisibleWidthError as exc:
            raise IndivisibleWidthError(f"layer {i}: {exc}") from exc
        out.append(QuantizedDense(q, layer.bias, layer.activation))
    model = QuantizedModel(out)
    accounts = [layer_rate(layer) for layer in out]
    return model, accounts, aggregate_rate(accounts)
