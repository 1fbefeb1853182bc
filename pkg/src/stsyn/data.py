"""Datasets: synthetic generators, CSV/IDX readers and i.i.d. sharding.

File conventions
----------------
CSV
    One sample per row, comma separated, last column is the label. A first
    row that does not parse as numbers is treated as a header and skipped.
IDX
    The big-endian format used by (E)MNIST: two zero bytes, a type code, the
    number of dimensions, one 4-byte size per dimension, then the payload.
    Gzipped files are detected by their magic bytes. Image tensors are
    flattened per sample; unsigned-byte images are scaled to [0, 1].
"""
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .rng import keyed_rng
from .sgd import LogisticObjective, QuadraticObjective

DATASET_KINDS = ("synthetic-quadratic", "synthetic-logistic", "file")

_IDX_TYPES = {
    0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic-quadratic"
    n_samples: int = 1000
    dim: int = 10
    seed: int = 0
    noise: float = 1.0          # label noise std (quadratic)
    scale: float = 3.0          # norm of the planted logistic weights
    feature_scale: float = 1.0  # std of the synthetic features
    path: str = None
    label_path: str = None      # IDX label file; CSV keeps labels inline
    format: str = None          # "csv" or "idx"; inferred from the suffix if absent
    loss: str = "logistic"      # objective used for file data: logistic | quadratic
    positive_class: float = None


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path):
    """Read an IDX file into an array with its stored shape and dtype."""
    with _open_maybe_gzip(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file (bad magic number)")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise ValueError(f"{path}: unsupported IDX type code 0x{code:02x}")
    shape = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = _IDX_TYPES[code]
    offset = 4 + 4 * ndim
    count = int(np.prod(shape)) if shape else 1
    if len(raw) - offset != count * dtype.itemsize:
        raise ValueError(f"{path}: payload size does not match header shape {shape}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def write_idx(path, array):
    """Write ``array`` as an uncompressed IDX file (used by tests and demos)."""
    array = np.asarray(array)
    codes = {v.newbyteorder("="): k for k, v in _IDX_TYPES.items()}
    code = codes[array.dtype]
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, code, array.ndim]))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.astype(array.dtype.newbyteorder(">")).tobytes())


def read_csv(path):
    """Return ``(features, labels)`` from a CSV whose last column is the label."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(x) for x in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    return data[:, :-1], data[:, -1]


def load_file_dataset(spec):
    fmt = spec.format
    if fmt is None:
        name = spec.path.lower().removesuffix(".gz")
        fmt = "csv" if name.endswith(".csv") else "idx"
    if fmt == "csv":
        X, labels = read_csv(spec.path)
    elif fmt == "idx":
        if spec.label_path is None:
            raise ValueError("IDX datasets need a label_path")
        images = read_idx(spec.path)
        labels = read_idx(spec.label_path).astype(np.float64).ravel()
        X = images.reshape(len(images), -1).astype(np.float64)
        if images.dtype == np.uint8:
            X /= 255.0
        if len(labels) != len(X):
            raise ValueError("image and label counts differ")
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    return X, labels


def binarize_labels(labels, positive_class=None):
    """Map labels to {-1, +1}. Two-valued labels map larger -> +1."""
    labels = np.asarray(labels, dtype=np.float64)
    if positive_class is not None:
        return np.where(labels == positive_class, 1.0, -1.0)
    values = np.unique(labels)
    if len(values) != 2:
        raise ValueError(
            f"labels take {len(values)} distinct values; set positive_class to binarize them"
        )
    return np.where(labels == values[1], 1.0, -1.0)


def synthetic_quadratic(n_samples, dim, seed=0, noise=1.0, feature_scale=1.0):
    rng = keyed_rng(seed, "data", 0)
    A = feature_scale * rng.standard_normal((n_samples, dim))
    w_true = rng.standard_normal(dim)
    b = A @ w_true + noise * rng.standard_normal(n_samples)
    return QuadraticObjective(A, b)


def synthetic_logistic(n_samples, dim, seed=0, scale=3.0, feature_scale=1.0):
    """Gaussian features; labels drawn from a planted logistic model.

    ``scale`` is the margin scale of the planted model in units of the feature
    std, so it fixes the label noise level independently of ``feature_scale``.
    """
    rng = keyed_rng(seed, "data", 1)
    A = feature_scale * rng.standard_normal((n_samples, dim))
    w_true = rng.standard_normal(dim)
    w_true *= scale / (feature_scale * np.linalg.norm(w_true))
    p = 1.0 / (1.0 + np.exp(-(A @ w_true)))
    y = np.where(rng.random(n_samples) < p, 1.0, -1.0)
    return LogisticObjective(A, y)


def build_objective(spec):
    if spec.kind == "synthetic-quadratic":
        return synthetic_quadratic(spec.n_samples, spec.dim, spec.seed, spec.noise, spec.feature_scale)
    if spec.kind == "synthetic-logistic":
        return synthetic_logistic(spec.n_samples, spec.dim, spec.seed, spec.scale, spec.feature_scale)
    if spec.kind == "file":
        X, labels = load_file_dataset(spec)
        if spec.loss == "quadratic":
            return QuadraticObjective(X, labels)
        return LogisticObjective(X, binarize_labels(labels, spec.positive_class))
    raise ValueError(f"unknown dataset kind {spec.kind!r}")


def partition_iid(n_samples, M, seed=0):
    """Shuffle ``range(n_samples)`` and split it into ``M`` contiguous shards.

    The first ``n_samples % M`` shards get one extra sample.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if n_samples < M:
        raise ValueError(f"cannot split {n_samples} samples over {M} workers")
    order = keyed_rng(seed, "partition").permutation(n_samples)
    return np.array_split(order, M)
