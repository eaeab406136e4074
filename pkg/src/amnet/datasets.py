"""Data ingestion (IDX, labelled CSV), synthetic blobs, splits and minibatches."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed input file. ``offset`` is the byte offset (IDX) or
    ``row``/``col`` the 1-based cell position (CSV) where parsing failed."""

    def __init__(self, message, *, path=None, offset=None, row=None, col=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.path = path
        self.offset = offset
        self.row = row
        self.col = col


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim < 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain NaN or Inf")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((labels.shape[0], num_classes))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


# -- IDX -----------------------------------------------------------------------

def _read_idx(path, magic: int, ndims: int) -> tuple[tuple[int, ...], bytes]:
    buf = Path(path).read_bytes()
    header = 4 + 4 * ndims
    if len(buf) < 4:
        raise DataFormatError(f"file too short for magic number ({len(buf)} bytes)",
                              path=path, offset=0)
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise DataFormatError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}",
                              path=path, offset=0)
    if len(buf) < header:
        raise DataFormatError(f"truncated header: expected {header} bytes, "
                              f"got {len(buf)}", path=path, offset=len(buf))
    dims = struct.unpack_from(f">{ndims}I", buf, 4)
    expected = header + int(np.prod(dims, dtype=np.int64))
    if len(buf) != expected:
        kind = "truncated payload" if len(buf) < expected else "trailing bytes"
        raise DataFormatError(f"{kind}: expected {expected} bytes, got {len(buf)}",
                              path=path, offset=min(len(buf), expected))
    return dims, buf[header:]


def read_idx_images(path) -> np.ndarray:
    """n x (rows*cols) float64 pixels scaled to [0, 1]."""
    (n, rows, cols), payload = _read_idx(path, IMAGES_MAGIC, 3)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def read_idx_image_shape(path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(16)
    if len(head) < 16 or struct.unpack_from(">I", head, 0)[0] != IMAGES_MAGIC:
        raise DataFormatError("not an IDX image file", path=path, offset=0)
    return struct.unpack_from(">III", head, 4)


def read_idx_labels(path) -> np.ndarray:
    (n,), payload = _read_idx(path, LABELS_MAGIC, 1)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images, rows: int, cols: int) -> None:
    """Inverse of read_idx_images; pixels are round(255 * value)."""
    images = np.asarray(images, dtype=np.float64)
    raw = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, raw.shape[0], rows, cols))
        fh.write(raw.reshape(raw.shape[0], rows * cols).tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def load_mnist(data_dir, split: str = "train", limit: int | None = None,
               start: int = 0) -> Dataset:
    prefix = "train" if split == "train" else "t10k"
    d = Path(data_dir)
    X = read_idx_images(d / f"{prefix}-images-idx3-ubyte")
    y = read_idx_labels(d / f"{prefix}-labels-idx1-ubyte")
    if X.shape[0] != y.shape[0]:
        raise DataFormatError(f"{X.shape[0]} images but {y.shape[0]} labels", path=d)
    stop = None if limit is None else start + limit
    return Dataset(X[start:stop], y[start:stop], 10)


# -- CSV -----------------------------------------------------------------------

def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_csv_labeled(path, standardize_features: bool = True) -> Dataset:
    """Numeric CSV whose first column is the integer class label.

    A non-numeric first row is treated as a header. Features are
    standardized per column unless ``standardize_features`` is False (use
    :func:`standardize` after splitting to fit statistics on train only).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError("empty CSV file", path=path)
    first = 1
    if not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        first = 2
    if not rows:
        raise DataFormatError("CSV has a header but no data rows", path=path)
    width = len(rows[0])
    if width < 2:
        raise DataFormatError("need a label column and at least one feature",
                              path=path, row=first)
    labels = np.empty(len(rows), dtype=np.int64)
    feats = np.empty((len(rows), width - 1))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"expected {width} cells, got {len(row)}",
                                  path=path, row=i + first)
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"non-numeric cell {cell!r}", path=path,
                                      row=i + first, col=j + 1) from None
            if not np.isfinite(v):
                raise DataFormatError(f"non-finite cell {cell!r}", path=path,
                                      row=i + first, col=j + 1)
            if j == 0:
                if v != int(v) or v < 0:
                    raise DataFormatError(f"label {cell!r} is not a class index",
                                          path=path, row=i + first, col=1)
                labels[i] = int(v)
            else:
                feats[i, j - 1] = v
    ds = Dataset(feats, labels, int(labels.max()) + 1)
    if standardize_features:
        (ds,) = standardize(ds)
    return ds


def standardize(train: Dataset, *others: Dataset, eps: float = 1e-12) -> tuple[Dataset, ...]:
    """Zero-mean unit-variance columns using statistics of ``train`` only."""
    mean = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd = np.where(sd < eps, 1.0, sd)
    return tuple(Dataset((d.features - mean) / sd, d.labels, d.num_classes)
                 for d in (train, *others))


# -- synthetic -----------------------------------------------------------------

def make_blobs(n: int, p: int, m: int, separation: float, seed: int) -> Dataset:
    """m unit-variance Gaussian clusters whose means are ``separation`` apart
    (pairwise when m <= p, adjacent on a circle otherwise)."""
    rng = np.random.default_rng(seed)
    means = np.zeros((m, p))
    if m <= p:
        means[np.arange(m), np.arange(m)] = separation / np.sqrt(2.0)
    else:
        if p < 2:
            raise ValueError("need p >= 2 when m > p")
        radius = separation / (2.0 * np.sin(np.pi / m))
        ang = 2.0 * np.pi * np.arange(m) / m
        means[:, 0] = radius * np.cos(ang)
        means[:, 1] = radius * np.sin(ang)
    labels = rng.integers(0, m, size=n)
    X = means[labels] + rng.standard_normal((n, p))
    return Dataset(X, labels, m)


# -- splits and streaming ------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    perm = np.random.default_rng(spec.seed).permutation(len(ds))
    k = int(round(spec.train_fraction * len(ds)))
    return ds.subset(np.sort(perm[:k])), ds.subset(np.sort(perm[k:]))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def minibatches(ds: Dataset, batch: int, seed: int, epoch: int):
    """Yield (x, one-hot y) batches in a seeded per-epoch order; the final
    partial batch is included."""
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    perm = epoch_permutation(len(ds), seed, epoch)
    for start in range(0, len(ds), batch):
        idx = perm[start:start + batch]
        yield ds.features[idx], one_hot(ds.labels[idx], ds.num_classes)


def pool_sequence(images, rows: int, cols: int, k: int) -> np.ndarray:
    """k x k average pooling, then row-major scan: n x T x 1 sequences."""
    images = np.asarray(images, dtype=np.float64)
    if rows % k or cols % k:
        raise ValueError(f"pool factor {k} must divide {rows}x{cols}")
    n = images.shape[0]
    pooled = images.reshape(n, rows // k, k, cols // k, k).mean(axis=(2, 4))
    return pooled.reshape(n, -1, 1)
