"""PGD under L2 / Linf threat models, batched over samples."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .data import Dataset
from .losses import cross_entropy
from .models import MlpModel, logits, predict


@dataclass(frozen=True)
class ThreatModel:
    norm: str = "l2"
    eps: float = 15.0
    clamp: tuple[float, float] | None = None

    def __post_init__(self):
        if self.norm not in ("l2", "linf"):
            raise ValueError(f"norm must be 'l2' or 'linf', got {self.norm!r}")
        if not self.eps >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.eps}")
        if self.clamp is not None and not self.clamp[0] < self.clamp[1]:
            raise ValueError(f"clamp needs lo < hi, got {self.clamp}")


@dataclass(frozen=True)
class PgdConfig:
    steps: int = 10
    step_size: float | None = None  # None -> 2 * eps / steps
    random_init: bool = False
    target: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("PGD needs at least one step")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step size must be positive")

    def alpha(self, threat: ThreatModel) -> float:
        return self.step_size if self.step_size is not None else 2.0 * threat.eps / self.steps


@dataclass
class PgdDiagnostics:
    zero_grad_steps: int = 0
    iterate_norms: list = field(default_factory=list)


def _row_norms(d: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(d * d, axis=-1, keepdims=True))


def project(delta: np.ndarray, threat: ThreatModel) -> np.ndarray:
    """Nearest point of the eps-ball (per row for batches)."""
    delta = np.asarray(delta, dtype=np.float64)
    eps = threat.eps
    if threat.norm == "linf":
        return np.clip(delta, -eps, eps)
    n = _row_norms(delta)
    factor = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
    return delta * factor


def random_init(shape, threat: ThreatModel, rng: np.random.Generator) -> np.ndarray:
    if threat.norm == "linf":
        return rng.uniform(-threat.eps, threat.eps, size=shape)
    shape = tuple(shape) if len(shape) > 1 else (1, shape[0])
    d = rng.normal(size=shape)
    d /= np.where(_row_norms(d) > 0, _row_norms(d), 1.0)
    r = rng.uniform(size=(shape[0], 1)) ** (1.0 / shape[1])
    return project(d * r * threat.eps, threat)


def loss_input_grad(model: MlpModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the summed cross-entropy w.r.t. each input row."""
    with gc.Tape() as tape:
        xl = tape.leaf("x", x)
        loss = gc.sum(cross_entropy(logits(model, xl), y))
        return gc.grad(loss, [xl])[0].data


def pgd(model: MlpModel, x, y, config: PgdConfig, threat: ThreatModel,
        rng: np.random.Generator | None = None, diagnostics: PgdDiagnostics | None = None) -> np.ndarray:
    """Adversarial examples for a batch ``x`` (B, M) or a single sample (M,).

    Untargeted steps ascend the loss of ``y``; with ``config.target`` set, steps
    descend the loss of the target class instead. Runs exactly ``config.steps``
    gradient steps.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    Y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(X),))
    if X.shape[1] != model.input_dim:
        raise gc.ShapeError(f"model expects dim {model.input_dim}, got {X.shape[1]}")
    diag = diagnostics if diagnostics is not None else PgdDiagnostics()
    alpha = config.alpha(threat)
    if config.random_init:
        rng = rng if rng is not None else np.random.default_rng(0)
        delta = random_init(X.shape, threat, rng)
    else:
        delta = np.zeros_like(X)
    delta = _clamp(X, delta, threat)
    if config.target is not None:
        labels, sign = np.full(len(X), config.target, dtype=np.int64), -1.0
    else:
        labels, sign = Y, 1.0
    for _ in range(config.steps):
        g = loss_input_grad(model, X + delta, labels)
        if threat.norm == "linf":
            direction = np.sign(g)
        else:
            n = _row_norms(g)
            zero = n[:, 0] == 0
            diag.zero_grad_steps += int(zero.sum())
            direction = np.where(n > 0, g / np.where(n > 0, n, 1.0), g)
        delta = project(delta + sign * alpha * direction, threat)
        delta = _clamp(X, delta, threat)
        diag.iterate_norms.append(_ball_norm(delta, threat))
    out = X + delta
    return out[0] if single else out


def _ball_norm(delta, threat):
    if threat.norm == "linf":
        return np.max(np.abs(delta), axis=-1)
    return _row_norms(delta)[:, 0]


def _clamp(X, delta, threat):
    if threat.clamp is None:
        return delta
    lo, hi = threat.clamp
    return np.clip(X + delta, lo, hi) - X


def robust_accuracy(model: MlpModel, ds: Dataset, config: PgdConfig, threat: ThreatModel,
                    seed: int = 0, batch_size: int = 1000) -> float:
    """Fraction of samples still classified correctly after the attack."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    correct = 0
    for lo in range(0, len(ds), batch_size):
        X, y = ds.X[lo:lo + batch_size], ds.y[lo:lo + batch_size]
        if threat.eps == 0:
            adv = X
        else:
            adv = pgd(model, X, y, config, threat, rng=rng)
        correct += int(np.sum(predict(model, adv) == y))
    return correct / len(ds)
