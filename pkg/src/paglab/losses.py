"""Cross-entropy, cosine loss on input-gradients, and the combined PAG objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .models import MlpModel, logits


@dataclass
class PagLossConfig:
    lam: float = 0.0
    cos_eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.cos_eps <= 0:
            raise ValueError(f"cosine eps must be > 0, got {self.cos_eps}")


def cross_entropy(z, y) -> gc.Tensor:
    """Per-example -log softmax(z)[y]. ``z`` is (B, C) with labels (B,), or (C,) with an int."""
    z = gc.as_tensor(z)
    single = z.ndim == 1
    if single:
        z = gc.reshape(z, (1, z.shape[0]))
    y = np.atleast_1d(np.asarray(y))
    C = z.shape[1]
    if y.shape != (z.shape[0],) or np.any(y < 0) or np.any(y >= C):
        raise ValueError(f"labels {y.tolist()} out of range for {C} classes")
    out = gc.sub(gc.logsumexp(z, axis=1), gc.index_select(z, y.astype(np.int64)))
    return gc.reshape(out, ()) if single else out


def cosine_loss(v, u, eps: float = 1e-8) -> gc.Tensor:
    """1 - v.u / max(|v| |u|, eps), reduced over the last axis."""
    v, u = gc.as_tensor(v), gc.as_tensor(u)
    if v.shape != u.shape:
        raise gc.ShapeError(f"cosine_loss: shape mismatch {v.shape} vs {u.shape}")
    denom = gc.maximum_const(gc.mul(gc.norm(v, axis=-1), gc.norm(u, axis=-1)), eps)
    return gc.sub(1.0, gc.div(gc.dot(v, u, axis=-1), denom))


def input_gradients(z: gc.Tensor, x: gc.Tensor, create_graph: bool = True) -> list[gc.Tensor]:
    """d z[:, c] / d x for every class c. Rows of a batch don't interact, so summing
    over the batch gives each example its own gradient."""
    return [gc.grad(gc.sum(gc.index_select(z, np.full(z.shape[0], c))), [x],
                    create_graph=create_graph)[0]
            for c in range(z.shape[1])]


def pag_terms(model: MlpModel, x: gc.Tensor, y, targets: np.ndarray, config: PagLossConfig,
              params: list[gc.Tensor]):
    """Per-example cross-entropy and summed cosine terms, both (B,) tensors.

    ``x`` must be a leaf on the active tape; ``targets`` is (B, C, M).
    """
    B, M = x.shape
    C = model.num_classes
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (B, C, M):
        raise ValueError(f"need a target per class: expected targets of shape {(B, C, M)}, "
                         f"got {targets.shape}")
    z = logits(model, x, params)
    ce = cross_entropy(z, y)
    cos = None
    for c, gx in enumerate(input_gradients(z, x, create_graph=True)):
        term = cosine_loss(gx, targets[:, c, :], config.cos_eps)
        cos = term if cos is None else gc.add(cos, term)
    return ce, cos


def pag_total_loss(model: MlpModel, x, y, targets, config: PagLossConfig,
                   params: list[gc.Tensor] | None = None, tape: gc.Tape | None = None) -> gc.Tensor:
    """Batch mean of CE + lambda * sum over classes of the cosine loss.

    Works on a fresh tape unless one is given; returns the scalar loss node and
    leaves ``params`` bound on that tape so the caller can differentiate.
    """
    tape = tape or gc.Tape()
    with tape:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        targets = np.asarray(targets, dtype=np.float64)
        if targets.ndim == 2:
            targets = targets[None]
        xl = tape.leaf("x", x) if "x" not in tape.leaves else tape.leaves["x"]
        if params is None:
            params = model.bind(tape)
        ce, cos = pag_terms(model, xl, y, targets, config, params)
        total = gc.add(ce, gc.scale(cos, config.lam))
        return gc.mean(total)
