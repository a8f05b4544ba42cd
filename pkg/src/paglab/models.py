"""MLP classifiers and the PAGLAB01 checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc

MAGIC = b"PAGLAB01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class MlpModel:
    """Fully connected ReLU network; ``weights[i]`` has shape (dims[i+1], dims[i])."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = self.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} "
                                 f"inconsistent with dims {dims}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        """Parameters in canonical order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def param_names(self) -> list[str]:
        return [f"{k}{i}" for i in range(len(self.weights)) for k in ("W", "b")]

    def with_params(self, params: list[np.ndarray]) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [p.copy() for p in params[0::2]],
                        [p.copy() for p in params[1::2]], dict(self.metadata))

    def copy(self) -> "MlpModel":
        return self.with_params(self.params())

    def bind(self, tape: gc.Tape, requires_grad: bool = True) -> list[gc.Tensor]:
        """Register the parameters as named leaves on ``tape``."""
        return [tape.leaf(name, p, requires_grad=requires_grad)
                for name, p in zip(self.param_names(), self.params())]


def init(layer_dims, seed: int) -> MlpModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError(f"layer dims must be >= 2 positive integers, got {list(layer_dims)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def logits(model: MlpModel, x, params: list[gc.Tensor] | None = None) -> gc.Tensor:
    """Record the forward pass on the active tape.

    ``x`` is a (batch, M) or (M,) tensor; the result has matching leading shape.
    ``params`` are the bound parameter leaves; without them the parameters enter
    as constants.
    """
    x = gc.as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = gc.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise gc.ShapeError(f"model expects inputs of dim {model.input_dim}, got shape {x.shape}")
    if params is None:
        params = [gc.as_tensor(p) for p in model.params()]
    h = x
    n_layers = len(model.weights)
    for i in range(n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        h = gc.add(gc.matmul(h, gc.transpose(w)), b)
        if i < n_layers - 1:
            h = gc.relu(h)
    if squeeze:
        h = gc.reshape(h, (model.num_classes,))
    return h


def predict_logits(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass (no tape)."""
    h = np.atleast_2d(np.asarray(X, dtype=np.float64))
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if i < len(model.weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(predict_logits(model, X), axis=1)


def accuracy(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(model, X) == y))


# ---------------------------------------------------------------------------
# checkpoint I/O

def to_bytes(model: MlpModel) -> bytes:
    dims = model.layer_dims
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(dims)), struct.pack(f"<{len(dims)}I", *dims)]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    meta = json.dumps(model.metadata, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(meta)), meta]
    return b"".join(parts)


def from_bytes(buf: bytes) -> MlpModel:
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise CheckpointError("not a PAGLAB01 checkpoint (bad magic bytes)")
    version, n = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    off = 16
    try:
        dims = list(struct.unpack_from(f"<{n}I", buf, off))
        off += 4 * n
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(_read_f64(buf, off, (fan_out, fan_in)))
            off += 8 * fan_in * fan_out
            biases.append(_read_f64(buf, off, (fan_out,)))
            off += 8 * fan_out
        (mlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        if off + mlen != len(buf):
            raise CheckpointError(f"checkpoint size mismatch: metadata needs {mlen} bytes, "
                                  f"{len(buf) - off} remain")
        meta = json.loads(buf[off:off + mlen].decode("utf-8"))
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return MlpModel(dims, weights, biases, meta)


def _read_f64(buf, off, shape):
    count = int(np.prod(shape))
    if off + 8 * count > len(buf):
        raise CheckpointError(f"truncated checkpoint: expected {count} float64 values at byte {off}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)


def save(model: MlpModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path) -> MlpModel:
    return from_bytes(Path(path).read_bytes())
