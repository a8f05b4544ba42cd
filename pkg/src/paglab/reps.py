"""Target input-gradients g(x, c) for every training sample and class.

Representative schemes set g(x, c) = r_c(x) - x for a point r_c(x) of class c:
a single random sample (one-image), the norm-matched class mean (class-mean), or
the nearest sample from a random pool of the class (nearest-neighbor). The
distillation scheme copies a teacher model's logit input-gradients.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc
from . import models
from .data import Dataset

MAGIC = b"PAGREP01"
SCHEMES = ("one-image", "class-mean", "nearest-neighbor", "rigd")


class StoreError(ValueError):
    pass


@dataclass
class RepStore:
    targets: np.ndarray  # (N, C, M)
    scheme: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise StoreError(f"unknown scheme {self.scheme!r}")
        if self.targets.ndim != 3:
            raise StoreError(f"targets must be (N, C, M), got {self.targets.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.targets.shape

    def check_against(self, ds: Dataset) -> None:
        N, C, M = self.shape
        if (N, C, M) != (len(ds), ds.num_classes, ds.dim):
            raise StoreError(f"store shape (N={N}, C={C}, M={M}) does not match dataset "
                             f"(N={len(ds)}, C={ds.num_classes}, M={ds.dim})")


def _class_indices(ds: Dataset) -> list[np.ndarray]:
    out = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.y == c)
        if len(idx) == 0:
            raise StoreError(f"class {c} has no samples")
        out.append(idx)
    return out


def _from_representatives(ds: Dataset, reps: np.ndarray) -> np.ndarray:
    # reps: (C, M) shared, or (N, C, M) per sample
    if reps.ndim == 2:
        reps = reps[None, :, :]
    return reps - ds.X[:, None, :]


def one_image_reps(ds: Dataset, seed: int = 0) -> RepStore:
    rng = np.random.default_rng(seed)
    chosen = [int(rng.choice(idx)) for idx in _class_indices(ds)]
    targets = _from_representatives(ds, ds.X[chosen])
    return RepStore(targets, "one-image", {"seed": seed, "representatives": chosen})


def class_mean_representatives(ds: Dataset) -> np.ndarray:
    """Class means rescaled to the average sample L2 norm."""
    target_norm = np.mean(np.linalg.norm(ds.X, axis=1))
    reps = []
    for c, idx in enumerate(_class_indices(ds)):
        m = ds.X[idx].mean(axis=0)
        n = np.linalg.norm(m)
        if n == 0:
            raise StoreError(f"class {c} has a zero mean; cannot rescale it")
        reps.append(m * (target_norm / n))
    return np.array(reps)


def class_mean_reps(ds: Dataset) -> RepStore:
    return RepStore(_from_representatives(ds, class_mean_representatives(ds)), "class-mean", {})


def sample_pools(ds: Dataset, pool_size: int, seed: int) -> list[np.ndarray]:
    """Per class, ``pool_size`` i.i.d. draws (with replacement) of sample indices."""
    rng = np.random.default_rng(seed)
    return [rng.choice(idx, size=pool_size, replace=True) for idx in _class_indices(ds)]


def nearest_in_pool(ds: Dataset, pool: np.ndarray, chunk_elems: int = 1 << 22) -> np.ndarray:
    """For each sample, the pool index nearest in L2 excluding exact copies of the sample.

    Ties go to the lowest sample index.
    """
    pool = np.unique(pool)  # sorted, so argmin's first-hit rule picks the lowest index
    P = ds.X[pool]
    best = np.empty(len(ds), dtype=np.int64)
    step = max(1, chunk_elems // (len(pool) * ds.dim))
    for lo in range(0, len(ds), step):
        diff = P[None, :, :] - ds.X[lo:lo + step, None, :]
        d2 = np.sum(diff * diff, axis=2)
        d2[np.all(diff == 0, axis=2)] = np.inf
        if np.any(np.isinf(d2.min(axis=1))):
            i = lo + int(np.flatnonzero(np.isinf(d2.min(axis=1)))[0])
            raise StoreError(f"sample {i}: no pool candidate left after excluding the sample itself")
        best[lo:lo + step] = pool[np.argmin(d2, axis=1)]
    return best


def nearest_neighbor_reps(ds: Dataset, pool_size: int = 100, seed: int = 0) -> RepStore:
    if pool_size < 1:
        raise StoreError("pool size must be >= 1")
    nn = np.stack([nearest_in_pool(ds, pool) for pool in sample_pools(ds, pool_size, seed)], axis=1)
    targets = ds.X[nn] - ds.X[:, None, :]
    return RepStore(targets, "nearest-neighbor", {"pool": pool_size, "seed": seed})


def teacher_gradients(teacher: models.MlpModel, X: np.ndarray) -> np.ndarray:
    """(N, C, M) input-gradients of each teacher logit."""
    with gc.Tape() as tape:
        x = tape.leaf("x", X)
        z = models.logits(teacher, x)
        grads = [gc.grad(gc.sum(gc.index_select(z, np.full(len(X), c))), [x])[0].data
                 for c in range(teacher.num_classes)]
    return np.stack(grads, axis=1)


def rigd_reps(ds: Dataset, teacher: models.MlpModel, teacher_hash: str = "") -> RepStore:
    if teacher.input_dim != ds.dim or teacher.num_classes != ds.num_classes:
        raise StoreError(f"teacher dims {teacher.layer_dims} incompatible with dataset "
                         f"(M={ds.dim}, C={ds.num_classes})")
    if not teacher_hash:
        teacher_hash = hashlib.sha256(models.to_bytes(teacher)).hexdigest()
    return RepStore(teacher_gradients(teacher, ds.X), "rigd", {"teacher_sha256": teacher_hash})


def store_key(dataset_hash: str, scheme: str, params: dict) -> str:
    """Content address of a store: hash of (dataset, scheme, parameters incl. seed)."""
    blob = json.dumps({"dataset": dataset_hash, "scheme": scheme, "params": params}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def build(ds: Dataset, scheme: str, *, seed: int = 0, pool: int = 100,
          teacher: models.MlpModel | None = None) -> RepStore:
    if scheme == "one-image":
        return one_image_reps(ds, seed)
    if scheme == "class-mean":
        return class_mean_reps(ds)
    if scheme == "nearest-neighbor":
        return nearest_neighbor_reps(ds, pool, seed)
    if scheme == "rigd":
        if teacher is None:
            raise StoreError("rigd needs a teacher model")
        return rigd_reps(ds, teacher)
    raise StoreError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# PAGREP01 store files

def _lp(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def to_bytes(store: RepStore) -> bytes:
    N, C, M = store.shape
    return b"".join([
        MAGIC, struct.pack("<III", N, C, M),
        _lp(store.scheme.encode("utf-8")),
        _lp(json.dumps(store.params, sort_keys=True).encode("utf-8")),
        np.ascontiguousarray(store.targets, dtype="<f8").tobytes(),
    ])


def from_bytes(buf: bytes) -> RepStore:
    if buf[:8] != MAGIC:
        raise StoreError("not a PAGREP01 store (bad magic bytes)")
    try:
        N, C, M = struct.unpack_from("<III", buf, 8)
        off = 20
        (n,) = struct.unpack_from("<I", buf, off)
        scheme = buf[off + 4:off + 4 + n].decode("utf-8")
        off += 4 + n
        (n,) = struct.unpack_from("<I", buf, off)
        params = json.loads(buf[off + 4:off + 4 + n].decode("utf-8"))
        off += 4 + n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreError(f"corrupt store header: {exc}") from None
    need = 8 * N * C * M
    if len(buf) - off != need:
        raise StoreError(f"store body holds {len(buf) - off} bytes, header implies {need}")
    targets = np.frombuffer(buf, dtype="<f8", offset=off).astype(np.float64).reshape(N, C, M)
    return RepStore(targets, scheme, params)


def save_store(store: RepStore, path) -> None:
    Path(path).write_bytes(to_bytes(store))


def load_store(path, dataset: Dataset | None = None) -> RepStore:
    store = from_bytes(Path(path).read_bytes())
    if dataset is not None:
        store.check_against(dataset)
    return store
