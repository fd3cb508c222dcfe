"""Datasets: synthetic logistic tasks, MNIST IDX files, columnar text."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

__all__ = [
    "Dataset",
    "IdxFormatError",
    "generate_synthetic_logistic",
    "read_idx",
    "write_idx",
    "random_projection",
    "load_mnist_projected",
    "save_dataset_text",
    "load_dataset_text",
    "columnar_to_idx",
    "read_magic",
]


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.labels)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one example")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    def __len__(self):
        return self.N

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(
            np.concatenate([self.inputs, other.inputs]),
            np.concatenate([self.labels, other.labels]),
        )


def generate_synthetic_logistic(N: int, w_true, rng: np.random.Generator) -> Dataset:
    """Unit-Gaussian inputs with labels from ``P(y | x) = 1 / (1 + exp(y w_true.x))``."""
    w_true = np.asarray(w_true, dtype=float)
    X = rng.standard_normal((N, w_true.size))
    p_plus = expit(-(X @ w_true))
    y = np.where(rng.random(N) < p_plus, 1, -1)
    return Dataset(X, y)


class IdxFormatError(ValueError):
    pass


_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX array (MNIST format), optionally gzip-compressed."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at byte 0 ({len(raw)} bytes)")
    zero, type_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise IdxFormatError(f"{path}: bytes 0-1 must be zero, found {zero:#06x}")
    if type_code not in _IDX_DTYPES:
        raise IdxFormatError(f"{path}: unknown type code {type_code:#04x} at byte 2")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated dimension list at byte 4 (need {header} bytes)")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_DTYPES[type_code]
    expected = int(np.prod(shape)) * dtype.itemsize
    body = len(raw) - header
    if body != expected:
        raise IdxFormatError(
            f"{path}: payload starting at byte {header} has {body} bytes, expected {expected} for shape {shape}"
        )
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(shape).astype(dtype.newbyteorder("="))


def write_idx(path, array) -> None:
    array = np.asarray(array)
    codes = {v.newbyteorder("="): k for k, v in _IDX_DTYPES.items()}
    dt = array.dtype.newbyteorder("=")
    if dt not in codes:
        raise IdxFormatError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, codes[dt], array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = array.astype(dt.newbyteorder(">")).tobytes()
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(header + payload)


def random_projection(n_pixels: int, dim: int = 10, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n_pixels, dim))


def load_mnist_projected(
    image_path,
    label_path,
    projection_dim: int = 10,
    N: int | None = None,
    seed: int = 0,
    projection: np.ndarray | None = None,
) -> Dataset:
    """Flattened pixels in [0, 1] times a fixed Gaussian projection matrix.

    The projection is drawn from ``seed`` unless passed explicitly, so train
    and test splits loaded with the same seed share it. Only the first ``N``
    examples are kept.
    """
    images = read_idx(image_path)
    labels = read_idx(label_path)
    if images.ndim != 3 or read_magic(image_path) != 2051:
        raise IdxFormatError(f"{image_path}: expected magic 2051 (3-d ubyte images)")
    if labels.ndim != 1 or read_magic(label_path) != 2049:
        raise IdxFormatError(f"{label_path}: expected magic 2049 (1-d ubyte labels)")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if N is not None:
        images, labels = images[:N], labels[:N]
    pixels = images.reshape(images.shape[0], -1).astype(float) / 255.0
    if projection is None:
        projection = random_projection(pixels.shape[1], projection_dim, seed)
    return Dataset(pixels @ projection, labels.astype(int))


def read_magic(path) -> int:
    with _open(path) as f:
        head = f.read(4)
    if len(head) < 4:
        raise IdxFormatError(f"{path}: truncated header at byte 0")
    return struct.unpack(">I", head)[0]


def save_dataset_text(dataset: Dataset, path) -> None:
    """One example per row, input columns then the label."""
    rows = np.column_stack([dataset.inputs, dataset.labels.astype(float)])
    np.savetxt(path, rows, fmt="%.17g")


def load_dataset_text(path) -> Dataset:
    rows = np.atleast_2d(np.loadtxt(path, dtype=float))
    return Dataset(rows[:, :-1], rows[:, -1].astype(int))


def columnar_to_idx(text_path, out_dir, n_test: int, image_shape=(28, 28), seed: int = 0, delimiter=","):
    """Split a pixel table (one image per row, label last) into IDX files.

    Rows are shuffled with ``seed`` first, so class-sorted tables give mixed
    splits. The last ``n_test`` shuffled rows form the test set. Writes
    ``train-images-idx3-ubyte`` and friends into ``out_dir`` and returns
    their paths keyed ``train_images``, ``train_labels``, ``test_images``,
    ``test_labels``.
    """
    rows = np.loadtxt(text_path, delimiter=delimiter, dtype=np.int64, ndmin=2)
    n_pixels = int(np.prod(image_shape))
    if rows.shape[1] != n_pixels + 1:
        raise ValueError(f"expected {n_pixels + 1} columns, found {rows.shape[1]}")
    if not 0 < n_test < rows.shape[0]:
        raise ValueError(f"n_test must lie in (0, {rows.shape[0]})")
    if rows[:, :-1].min() < 0 or rows[:, :-1].max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    rows = rows[np.random.default_rng(seed).permutation(rows.shape[0])]
    images = rows[:, :-1].astype(np.uint8).reshape((-1, *image_shape))
    labels = rows[:, -1].astype(np.uint8)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_train = rows.shape[0] - n_test
    paths = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    write_idx(paths["train_images"], images[:n_train])
    write_idx(paths["train_labels"], labels[:n_train])
    write_idx(paths["test_images"], images[n_train:])
    write_idx(paths["test_labels"], labels[n_train:])
    return paths
