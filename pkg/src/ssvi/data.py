"""Dataset construction: synthetic desk-scale tasks and file loaders.

IDX files follow the big-endian layout (documented byte-for-byte in the
README): 4-byte magic 0x00000803 (images, 3 dims) or 0x00000801 (labels,
1 dim), one big-endian uint32 per dimension, then unsigned-byte payload.
Loaders never shuffle; ordering randomness belongs to the trainer seed.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import CsvFormatError, DataError, IdxFormatError

Task = Literal["classification", "regression"]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Immutable-by-convention feature/label table for one split."""

    features: np.ndarray          # [n, dim]
    labels: np.ndarray            # [n] int for classification, float for regression
    task: Task = "classification"
    split: str = "train"
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise DataError(f"features must be [n, dim], got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(
                f"labels shape {self.labels.shape} does not match n={self.features.shape[0]}"
            )
        if not np.isfinite(self.features).all():
            raise DataError("features contain NaN/Inf")
        if self.task == "classification":
            self.labels = self.labels.astype(np.int64)
            if self.labels.size and self.labels.min() < 0:
                raise DataError("class labels must be nonnegative")
        else:
            self.labels = self.labels.astype(np.float64)
            if not np.isfinite(self.labels).all():
                raise DataError("labels contain NaN/Inf")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task != "classification":
            raise DataError("n_classes is undefined for regression data")
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def take(self, n: int, *, split: str | None = None) -> "Dataset":
        return Dataset(self.features[:n].copy(), self.labels[:n].copy(),
                       self.task, split or self.split, self.name)


@dataclass(frozen=True)
class NormStats:
    """Per-feature standardization statistics, fit on train data only."""

    mean: np.ndarray
    std: np.ndarray


def fit_normalization(train: Dataset) -> NormStats:
    std = train.features.std(axis=0)
    return NormStats(mean=train.features.mean(axis=0), std=np.where(std > 0, std, 1.0))


def apply_normalization(ds: Dataset, stats: NormStats) -> Dataset:
    feats = (ds.features - stats.mean) / stats.std
    return Dataset(feats, ds.labels.copy(), ds.task, ds.split, ds.name)


def gen_two_moons(n: int, noise: float, seed: int, *, split: str = "train") -> Dataset:
    """Two interleaved unit half-circles with isotropic Gaussian noise.

    Class 0 is the upper half-circle centered at the origin, class 1 the
    lower half-circle centered at (1, 0.5). Classes are balanced
    (n//2 each plus the remainder on class 0).
    """
    if n < 2:
        raise DataError(f"two_moons needs n >= 2, got {n}")
    if noise < 0:
        raise DataError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n0 = n - n1
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    pts0 = np.column_stack([np.cos(t0), np.sin(t0)])
    pts1 = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    feats = np.concatenate([pts0, pts1])
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        feats = feats + rng.normal(0.0, noise, feats.shape)
    perm = rng.permutation(n)
    return Dataset(feats[perm], labels[perm], "classification", split, "two_moons")


def gen_sine(n: int, noise: float, seed: int, *, split: str = "train") -> Dataset:
    """1-D regression: y = sin(x) + noise on x ~ U(-pi, pi)."""
    if n < 2:
        raise DataError(f"sine needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-math.pi, math.pi, n)
    y = np.sin(x) + rng.normal(0.0, noise, n)
    return Dataset(x[:, None], y, "regression", split, "sine")


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def read_idx(path: str | Path) -> np.ndarray:
    """Parse one IDX file into a uint8 array; strict about the layout."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    raw = path.read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated before the 4-byte magic (got {len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x} at offset 0 "
            f"(bytes {raw[:4]!r}); expected 0x{IDX_IMAGES_MAGIC:08x} or 0x{IDX_LABELS_MAGIC:08x}"
        )
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(
            f"{path}: truncated inside the dimension header at offset {len(raw)} "
            f"(need {header_end} bytes)"
        )
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = header_end + int(np.prod(dims))
    if len(raw) < expected:
        raise IdxFormatError(
            f"{path}: payload truncated at offset {len(raw)}; dims {dims} "
            f"require {expected} bytes"
        )
    if len(raw) > expected:
        raise IdxFormatError(
            f"{path}: {len(raw) - expected} trailing bytes after offset {expected} "
            f"for dims {dims}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path,
             *, limit: int | None = None, split: str = "train") -> Dataset:
    """Image/label IDX pair -> flattened dataset with pixels in [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected a 3-D image file, got dims {images.shape}")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a 1-D label file, got dims {labels.shape}")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    if limit is not None:
        images = images[:limit]
        labels = labels[:limit]
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), "classification", split, "idx")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column contract for load_csv."""

    label_column: str
    feature_columns: tuple[str, ...] | None = None  # None: all other columns
    task: Task = "classification"


def load_csv(path: str | Path, schema: CsvSchema, *, split: str = "train") -> Dataset:
    """Header-checked numeric CSV; bad cells are rejected with line/column."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, no header") from None
        header = [h.strip() for h in header]
        if schema.label_column not in header:
            raise CsvFormatError(
                f"{path}: label column {schema.label_column!r} missing from header {header}"
            )
        if schema.feature_columns is None:
            feature_cols = [h for h in header if h != schema.label_column]
        else:
            missing = [c for c in schema.feature_columns if c not in header]
            if missing:
                raise CsvFormatError(f"{path}: feature columns {missing} missing from header")
            feature_cols = list(schema.feature_columns)
        if not feature_cols:
            raise CsvFormatError(f"{path}: no feature columns left")
        col_idx = {h: i for i, h in enumerate(header)}

        feats, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}"
                )

            def cell(col: str) -> float:
                text = row[col_idx[col]].strip()
                try:
                    return float(text)
                except ValueError:
                    raise CsvFormatError(
                        f"{path}:{line_no}: column {col!r} is not numeric: {text!r}"
                    ) from None

            feats.append([cell(c) for c in feature_cols])
            labels.append(cell(schema.label_column))

    if not feats:
        raise CsvFormatError(f"{path}: no data rows")
    labels_arr = np.asarray(labels)
    if schema.task == "classification":
        if not np.all(labels_arr == np.round(labels_arr)):
            raise CsvFormatError(f"{path}: classification labels must be integers")
        labels_arr = labels_arr.astype(np.int64)
    return Dataset(np.asarray(feats), labels_arr, schema.task, split, path.stem)
