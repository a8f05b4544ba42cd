"""Training loop shared by vanilla, PAG and adversarial regimes, plus optimizers."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .attacks import PgdConfig, ThreatModel, pgd
from .data import Dataset
from .losses import PagLossConfig, cross_entropy, pag_terms
from .models import MlpModel, accuracy, logits
from .reps import RepStore

log = logging.getLogger(__name__)

REGIMES = ("vanilla", "pag", "adversarial")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    regime: str = "vanilla"
    epochs: int = 100
    batch_size: int = 128
    optimizer: str = "adam"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    lam: float = 0.0
    cos_eps: float = 1e-8
    attack: PgdConfig = field(default_factory=lambda: PgdConfig(steps=10, random_init=True))
    threat: ThreatModel = field(default_factory=lambda: ThreatModel("l2", 15.0))

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        PagLossConfig(self.lam, self.cos_eps)


# ---------------------------------------------------------------------------
# optimizers; weight decay enters as an L2 term added to the gradient

def sgd_momentum_step(params, grads, state, lr, momentum=0.0, weight_decay=0.0):
    bufs = state.setdefault("momentum", [None] * len(params))
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay:
            g = g + weight_decay * p
        if momentum:
            bufs[i] = g.copy() if bufs[i] is None else momentum * bufs[i] + g
            g = bufs[i]
        out.append(p - lr * g)
    return out, state


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    b1, b2 = betas
    t = state.get("t", 0) + 1
    m = state.get("m") or [np.zeros_like(p) for p in params]
    v = state.get("v") or [np.zeros_like(p) for p in params]
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay:
            g = g + weight_decay * p
        m[i] = b1 * m[i] + (1 - b1) * g
        v[i] = b2 * v[i] + (1 - b2) * g * g
        m_hat = m[i] / (1 - b1 ** t)
        v_hat = v[i] / (1 - b2 ** t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    state.update(t=t, m=m, v=v)
    return out, state


# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    regime: str
    train_loss: float
    clean_acc: float
    cos_term: float | None = None
    ce_term: float | None = None


def batch_loss(model: MlpModel, X, y, config: TrainConfig, targets=None):
    """Scalar training loss of one batch and its parameter gradients.

    Returns (loss, grads, ce_mean, cos_mean); the last two are None outside the PAG regime.
    """
    with gc.Tape() as tape:
        params = model.bind(tape)
        if config.regime == "pag":
            x = tape.leaf("x", X)
            ce, cos = pag_terms(model, x, y, targets, PagLossConfig(config.lam, config.cos_eps), params)
            loss = gc.mean(gc.add(ce, gc.scale(cos, config.lam)))
        else:
            ce, cos = cross_entropy(logits(model, X, params), y), None
            loss = gc.mean(ce)
        grads = [g.data for g in gc.grad(loss, params)]
    ce_m = float(np.mean(ce.data)) if cos is not None else None
    cos_m = float(np.mean(cos.data)) if cos is not None else None
    return loss.item(), grads, ce_m, cos_m


def train(model: MlpModel, ds: Dataset, config: TrainConfig, store: RepStore | None = None,
          eval_every: int = 1):
    """Train a copy of ``model``; returns (trained model, list of EpochRecord)."""
    if (store is not None) != (config.regime == "pag"):
        raise TrainingError("a rep store is required for, and only for, the pag regime")
    if store is not None:
        store.check_against(ds)
    if model.input_dim != ds.dim or model.num_classes != ds.num_classes:
        raise TrainingError(f"model dims {model.layer_dims} do not fit dataset "
                            f"(M={ds.dim}, C={ds.num_classes})")
    shuffle_ss, attack_ss = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    attack_rng = np.random.default_rng(attack_ss)

    params = [p.copy() for p in model.params()]
    state: dict = {}
    records = []
    current = model.with_params(params)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(ds))
        tot = ce_tot = cos_tot = 0.0
        for b, lo in enumerate(range(0, len(ds), config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            X, y = ds.X[idx], ds.y[idx]
            if config.regime == "adversarial":
                X = pgd(current, X, y, config.attack, config.threat, rng=attack_rng)
            targets = store.targets[idx] if store is not None else None
            try:
                loss, grads, ce_m, cos_m = batch_loss(current, X, y, config, targets)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(f"epoch {epoch}, batch {b}: non-finite loss or gradient")
            if config.optimizer == "adam":
                params, state = adam_step(params, grads, state, config.lr,
                                          weight_decay=config.weight_decay)
            else:
                params, state = sgd_momentum_step(params, grads, state, config.lr,
                                                  config.momentum, config.weight_decay)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingError(f"epoch {epoch}, batch {b}: parameters became non-finite")
            current = model.with_params(params)
            tot += loss * len(idx)
            if ce_m is not None:
                ce_tot += ce_m * len(idx)
                cos_tot += cos_m * len(idx)
        n = len(ds)
        acc = accuracy(current, ds.X, ds.y) if epoch % eval_every == 0 or epoch == config.epochs else float("nan")
        rec = EpochRecord(epoch, config.regime, tot / n, acc,
                          cos_tot / n if config.regime == "pag" else None,
                          ce_tot / n if config.regime == "pag" else None)
        records.append(rec)
        log.debug("epoch %d loss %.6f acc %.4f", epoch, rec.train_loss, rec.clean_acc)
    current.metadata = {"regime": config.regime, "lambda": config.lam, "seed": config.seed,
                        "epochs": config.epochs, "optimizer": config.optimizer, "lr": config.lr}
    return current, records


def write_metrics(records: list[EpochRecord], path) -> None:
    pag = any(r.cos_term is not None for r in records)
    header = ["epoch", "regime", "train_loss", "clean_acc"] + (["cos_term", "ce_term"] if pag else [])
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in records:
            row = [r.epoch, r.regime, repr(r.train_loss), repr(r.clean_acc)]
            if pag:
                row += [repr(r.cos_term), repr(r.ce_term)]
            w.writerow(row)
