"""Datasets: the 2-D six-mode toy problem, CSV files and 32x32x3 binary image batches."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASS0_CENTERS = (-50.0, -10.0, 30.0)
CLASS1_CENTERS = (-30.0, 10.0, 50.0)

IMAGE_PIXELS = 32 * 32 * 3
IMAGE_RECORD = 1 + IMAGE_PIXELS
IMAGE_CLASSES = 10


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    split: str = "train"
    provenance: str = ""

    def __post_init__(self):
        if self.X.ndim != 2 or len(self.X) == 0:
            raise DataError(f"dataset needs a nonempty (N, M) array, got shape {self.X.shape}")
        if self.y.shape != (len(self.X),):
            raise DataError(f"{len(self.y)} labels for {len(self.X)} samples")
        if np.any(self.y < 0) or np.any(self.y >= self.num_classes):
            raise DataError(f"labels outside 0..{self.num_classes - 1}")
        if not np.all(np.isfinite(self.X)):
            raise DataError("dataset contains NaN or Inf")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes, self.split, self.provenance)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.y, dtype="<i8").tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


def _toy_split(rng, per_mode, split, seed):
    xs, ys = [], []
    for label, centers in enumerate((CLASS0_CENTERS, CLASS1_CENTERS)):
        for c in centers:
            x1 = rng.normal(c, 1.0, size=per_mode)
            xs.append(np.stack([x1, 2.0 * x1], axis=1))
            ys.append(np.full(per_mode, label))
    return Dataset(np.concatenate(xs), np.concatenate(ys).astype(np.int64), 2, split,
                   f"toy(seed={seed},per_mode={per_mode})")


def toy_generate(seed: int = 0, per_mode: int = 1000, test_per_mode: int = 100):
    """Two classes on the line x2 = 2 x1, three unit-variance modes each.

    Train and test come from independent child streams of ``seed``.
    """
    if per_mode < 1 or test_per_mode < 1:
        raise DataError("per-mode counts must be >= 1")
    train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
    train = _toy_split(np.random.default_rng(train_ss), per_mode, "train", seed)
    test = _toy_split(np.random.default_rng(test_ss), test_per_mode, "test", seed)
    return train, test


def load_csv(path, num_classes: int | None = None, split: str = "train") -> Dataset:
    """Rows of M floats followed by an integer label; a non-numeric first row is a header."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataError(f"{path} line {lineno}: need at least one feature and a label")
            elif len(row) != width:
                raise DataError(f"{path} line {lineno}: expected {width} fields, got {len(row)}")
            try:
                feats = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError:
                raise DataError(f"{path} line {lineno}: non-numeric field") from None
            if not all(np.isfinite(feats)):
                raise DataError(f"{path} line {lineno}: NaN or Inf value")
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DataError(f"{path} line {lineno}: label {label} out of range")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    C = num_classes if num_classes is not None else int(y.max()) + 1
    return Dataset(np.array(rows, dtype=np.float64), y, C, split, f"csv:{Path(path).name}")


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.dim)] + ["label"])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_image_batches(path, limit: int | None = None, split: str = "train") -> Dataset:
    """Records of one label byte then 3072 pixel bytes (R, G, B planes), scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % IMAGE_RECORD:
        raise DataError(f"{path}: {len(raw)} bytes is not a whole number of "
                        f"{IMAGE_RECORD}-byte records (truncated record?)")
    recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, IMAGE_RECORD)
    if limit is not None:
        recs = recs[:limit]
    y = recs[:, 0].astype(np.int64)
    X = recs[:, 1:].astype(np.float64) / 255.0
    return Dataset(X, y, IMAGE_CLASSES, split, f"images:{Path(path).name}")


def write_image_batches(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of :func:`load_image_batches` for uint8 pixel arrays of shape (N, 3072)."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), IMAGE_PIXELS)
    recs = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(recs.tobytes())
