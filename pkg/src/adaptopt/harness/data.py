"""Dataset ingestion: MNIST IDX files, numeric CSV, and synthetic clouds."""
from __future__ import annotations

import csv
import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidArgumentError
from ..problems import Dataset

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
POSITIVE_DIGIT = 5


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(raw: bytes, expected_magic: int, name: str = "idx") -> np.ndarray:
    """Decode one IDX payload (unsigned-byte data only) into an array."""
    if len(raw) < 8:
        raise FormatError(f"{name}: header truncated ({len(raw)} bytes)")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{name}: bad magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{name}: header truncated, need {header} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    if any(d < 0 for d in dims):
        raise FormatError(f"{name}: negative dimension in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    actual = len(raw) - header
    if actual != count:
        raise FormatError(f"{name}: payload has {actual} bytes, header declares {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_pair(images_path, labels_path):
    """Return (features in [0, 1], binary labels: 1 iff digit 5)."""
    imgs = parse_idx(_read_bytes(images_path), IMAGES_MAGIC, str(images_path))
    labs = parse_idx(_read_bytes(labels_path), LABELS_MAGIC, str(labels_path))
    if imgs.ndim != 3:
        raise FormatError(f"{images_path}: expected 3 dimensions, got {imgs.ndim}")
    if labs.ndim != 1:
        raise FormatError(f"{labels_path}: expected 1 dimension, got {labs.ndim}")
    if imgs.shape[0] != labs.shape[0]:
        raise FormatError(f"image count {imgs.shape[0]} != label count {labs.shape[0]}")
    X = imgs.reshape(imgs.shape[0], -1).astype(float) / 255.0
    y = (labs == POSITIVE_DIGIT).astype(np.int64)
    return X, y


def load_idx(images_path, labels_path, test_images=None, test_labels=None) -> Dataset:
    X, y = load_idx_pair(images_path, labels_path)
    Xt = yt = None
    if test_images is not None:
        Xt, yt = load_idx_pair(test_images, test_labels)
    return Dataset(X, y, Xt, yt)


def load_mnist_dir(root) -> Dataset:
    """Load the standard four MNIST files (optionally gzipped) from a folder."""
    root = Path(root)

    def find(stem):
        for cand in (root / stem, root / (stem + ".gz")):
            if cand.exists():
                return cand
        raise FormatError(f"missing MNIST file {stem} in {root}")

    return load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"),
                    find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"))


def load_csv(path, label_column) -> Dataset:
    """Numeric CSV with a header row; ``label_column`` is a name or index."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise FormatError(f"{path}: no data rows")
    if isinstance(label_column, int):
        li = label_column
    elif label_column in header:
        li = header.index(label_column)
    else:
        raise FormatError(f"{path}: no column named {label_column!r}")
    if not -len(header) <= li < len(header):
        raise FormatError(f"{path}: label column index {li} out of range")
    li %= len(header)
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        try:
            data[i - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise FormatError(f"{path}: row {i}: non-numeric cell ({exc})") from None
    labels = data[:, li]
    bad = np.flatnonzero(~np.isin(labels, (0.0, 1.0)))
    if bad.size:
        raise FormatError(f"{path}: row {bad[0] + 2}: label {labels[bad[0]]!r} is not 0 or 1")
    X = np.delete(data, li, axis=1)
    return Dataset(X, labels.astype(np.int64))


def gen_synthetic(n: int, d: int, margin: float, seed: int, test_fraction: float = 0.2) -> Dataset:
    """Two unit-variance Gaussian clouds centred at +margin*u and -margin*u
    for a random unit vector u.  The label is the cloud a point came from,
    so margin 0 yields labels independent of the features.  A held-out set
    of round(test_fraction * n) points is drawn from the same law."""
    if n < 1 or d < 1:
        raise InvalidArgumentError("n and d must be >= 1")
    if margin < 0:
        raise InvalidArgumentError("margin must be nonnegative")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)

    def draw(m):
        y = rng.integers(0, 2, size=m)
        X = rng.standard_normal((m, d)) + np.outer(2 * y - 1, margin * u)
        return X, y

    X, y = draw(n)
    m = int(round(test_fraction * n))
    Xt, yt = draw(m) if m > 0 else (None, None)
    return Dataset(X, y, Xt, yt)
