"""Binary model files.

Layout (all integers little-endian)::

    file    := "BQM1" u32:layer_count chunk*
    chunk   := u8:kind u8:activation u32:m u32:n body
    dense   (kind 0): f32[m*n] weights (row-major), f32[n] bias
    quant   (kind 1): u32:s u32:k u8:binary
                      indices   m*s values of ceil(log2 k) bits, row-major,
                                LSB-first, zero-padded to a byte boundary
                      codebooks s blocks of k*(n/s) entries, segment-major;
                                f32 each, or 1 bit each (+1 -> 1, -1 -> 0)
                                LSB-first and zero-padded when binary
                      f32[n] bias

Activation codes: 0 relu, 1 sigmoid, 2 identity.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFileError
from .nn import ACTIVATIONS, Layer, Network
from .pq import QuantizedDense, QuantizedLayer, QuantizedModel, index_bits

MAGIC = b"BQM1"
FILE_HEADER = struct.Struct("<4sI")
CHUNK_HEADER = struct.Struct("<BBII")
QUANT_HEADER = struct.Struct("<IIB")
DENSE, QUANTIZED = 0, 1
MAX_DIM = 1 << 31


def pack_bits(values, width: int) -> bytes:
    """Pack non-negative integers into ``width``-bit fields, LSB first."""
    values = np.asarray(values, dtype=np.uint64).ravel()
    if width == 0 or values.size == 0:
        return b""
    bits = (values[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)
    return np.packbits(bits.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_bits(buf: bytes, count: int, width: int) -> np.ndarray:
    if width == 0 or count == 0:
        return np.zeros(count, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    if bits[count * width :].any():
        raise CorruptFileError("non-zero padding bits")
    bits = bits[: count * width].reshape(count, width).astype(np.int64)
    return bits @ (np.int64(1) << np.arange(width, dtype=np.int64))


def _nbytes(nbits: int) -> int:
    return (nbits + 7) // 8


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _encode_layer(layer) -> bytes:
    act = ACTIVATIONS.index(layer.activation)
    if isinstance(layer, QuantizedDense):
        q = layer.q
        out = [
            CHUNK_HEADER.pack(QUANTIZED, act, q.m, q.n),
            QUANT_HEADER.pack(q.s, q.k, int(q.binary_codebook)),
            pack_bits(q.assignments, index_bits(q.k)),
        ]
        books = np.concatenate([np.asarray(c).ravel() for c in q.codebooks])
        if q.binary_codebook:
            if not np.all(np.abs(books) == 1):
                raise ValueError("binary codebook entries must be exactly +-1")
            out.append(pack_bits(books > 0, 1))
        else:
            out.append(_f32(books))
        out.append(_f32(layer.bias))
        return b"".join(out)
    m, n = layer.shape
    return CHUNK_HEADER.pack(DENSE, act, m, n) + _f32(layer.weights) + _f32(layer.bias)


def save_model(model) -> bytes:
    """Serialize a Network or QuantizedModel."""
    layers = model.layers
    return FILE_HEADER.pack(MAGIC, len(layers)) + b"".join(_encode_layer(l) for l in layers)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(bytes(buf))
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptFileError(
                f"truncated file: need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def _decode_layer(r: _Reader):
    kind, act, m, n = r.unpack(CHUNK_HEADER)
    if act >= len(ACTIVATIONS):
        raise CorruptFileError(f"unknown activation code {act}")
    if not (0 < m < MAX_DIM and 0 < n < MAX_DIM):
        raise CorruptFileError(f"bad layer dimensions {m}x{n}")
    activation = ACTIVATIONS[act]
    if kind == DENSE:
        w = r.f32(m * n).reshape(m, n)
        return Layer(w, r.f32(n), activation)
    if kind != QUANTIZED:
        raise CorruptFileError(f"unknown chunk kind {kind}")
    s, k, binary = r.unpack(QUANT_HEADER)
    if s == 0 or n % s or k == 0 or binary > 1:
        raise CorruptFileError(f"bad quantizer header s={s} k={k} binary={binary}")
    width = index_bits(k)
    idx = unpack_bits(r.take(_nbytes(m * s * width)), m * s, width)
    if idx.size and idx.max() >= k:
        raise CorruptFileError(f"index out of range for k={k}")
    dim = n // s
    if binary:
        bits = unpack_bits(r.take(_nbytes(k * n)), k * n, 1)
        books = np.where(bits == 1, 1.0, -1.0).astype(np.float32)
    else:
        books = r.f32(k * n)
    codebooks = [c.reshape(k, dim) for c in np.split(books, s)]
    q = QuantizedLayer(m, n, s, codebooks, idx.reshape(m, s), bool(binary))
    return QuantizedDense(q, r.f32(n), activation)


def load_model(buf: bytes):
    """Parse a model file; returns a Network if every layer is dense."""
    r = _Reader(buf)
    if len(r.buf) < FILE_HEADER.size:
        raise CorruptFileError("file shorter than its header")
    magic, count = r.unpack(FILE_HEADER)
    if magic != MAGIC:
        raise CorruptFileError(f"bad magic {bytes(magic)!r}")
    if count == 0:
        raise CorruptFileError("model has no layers")
    layers = []
    for _ in range(count):
        try:
            layers.append(_decode_layer(r))
        except (ValueError, struct.error) as exc:
            if isinstance(exc, CorruptFileError):
                raise
            raise CorruptFileError(str(exc)) from exc
    if r.pos != len(r.buf):
        raise CorruptFileError(f"{len(r.buf) - r.pos} trailing bytes")
    if any(isinstance(l, QuantizedDense) for l in layers):
        return QuantizedModel(layers)
    try:
        return Network(layers)
    except ValueError as exc:
        raise CorruptFileError(str(exc)) from exc


def save_dense(net: Network) -> bytes:
    return save_model(net)


def load_dense(buf: bytes) -> Network:
    model = load_model(buf)
    if not isinstance(model, Network):
        raise CorruptFileError("file holds quantized layers; use load_quantized")
    return model


def save_quantized(model: QuantizedModel) -> bytes:
    return save_model(model)


def load_quantized(buf: bytes) -> QuantizedModel:
    model = load_model(buf)
    return model if isinstance(model, QuantizedModel) else QuantizedModel(list(model.layers))


def layer_payload_bits(layer) -> int:
    if isinstance(layer, QuantizedDense):
        return sum(layer.q.payload_bits())
    m, n = layer.shape
    return 32 * m * n


def measured_size_bits(model) -> int:
    """Weight payload bits: headers, padding and biases excluded."""
    return sum(layer_payload_bits(l) for l in model.layers) if model is not None else 0


def bias_bits(model) -> int:
    return sum(32 * len(l.bias) for l in model.layers) if model is not None else 0


def write_model(path, model) -> None:
    Path(path).write_bytes(save_model(model))


def read_model(path):
    return load_model(Path(path).read_bytes())
