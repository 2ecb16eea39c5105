"""MNIST IDX parsing, one-hot targets and synthetic blob datasets."""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidLabelError, MalformedIdxError
from .nn import Dataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def parse_idx(buf: bytes, expected_magic: int) -> np.ndarray:
    """Decode an unsigned-byte IDX stream into an array of its declared shape."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise MalformedIdxError(f"stream of {len(buf)} bytes is too short for an IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise MalformedIdxError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise MalformedIdxError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    size = 1
    for d in dims:
        size *= d
    if len(buf) - header != size:
        raise MalformedIdxError(
            f"header declares {size} payload bytes for dims {dims}, found {len(buf) - header}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_images(buf: bytes) -> np.ndarray:
    """Images as flattened row-major float32 vectors scaled to [0, 1]."""
    raw = parse_idx(buf, IMAGES_MAGIC)
    return raw.reshape(len(raw), -1).astype(np.float32) / np.float32(255)


def load_idx_labels(buf: bytes) -> np.ndarray:
    return parse_idx(buf, LABELS_MAGIC).astype(np.int64)


def read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise MalformedIdxError(f"{path}: bad gzip stream: {exc}") from exc
    return raw


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def to_one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        labels = labels.astype(np.int64)
    if labels.dtype.kind not in "iu":
        raise InvalidLabelError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InvalidLabelError(f"labels must lie in [0, {classes})")
    out = np.zeros((len(labels), classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1
    return out


def load_mnist(directory, split: str = "train", limit: int | None = None) -> Dataset:
    """Load an MNIST split from ``directory`` (plain or gzipped IDX files).

    ``limit`` keeps the first ``limit`` examples.
    """
    directory = Path(directory)
    images_name, labels_name = MNIST_FILES[split]
    images = load_idx_images(read_maybe_gzip(_find(directory, images_name)))
    labels = load_idx_labels(read_maybe_gzip(_find(directory, labels_name)))
    if len(images) != len(labels):
        raise MalformedIdxError(f"{len(images)} images but {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images, to_one_hot(labels, 10))


def default_mnist_dir() -> Path:
    env = os.environ.get("BINPQ_MNIST_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data" / "mnist"


def synth_dataset(seed: int, examples: int, dims: int, classes: int, separation: float) -> Dataset:
    """Gaussian blobs with unit variance, one per class.

    Class means are random directions scaled so the closest pair of means is
    ``separation`` apart. Labels cycle through the classes, and features are
    affinely rescaled into [0, 1] with one global min/max.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((classes, dims))
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)[np.triu_indices(classes, 1)]
    closest = gaps.min()
    means *= separation / closest if closest > 0 else 0.0
    labels = np.arange(examples) % classes
    rng.shuffle(labels)
    x = means[labels] + rng.standard_normal((examples, dims))
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return Dataset(x.astype(np.float32), to_one_hot(labels, classes))
