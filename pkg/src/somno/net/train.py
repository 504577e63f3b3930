"""Training: Adam, plateau LR schedule, and the epoch loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..errors import DivergenceDetected
from .model import SleepNet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_min_lr: float = 1e-6
    plateau_min_delta: float = 1e-4
    seed: int = 0
    # stop once running training accuracy reaches this value (None: run all epochs)
    target_train_acc: float | None = None
    class_weighting: bool = False
    dump_path: str | None = None

    def __post_init__(self) -> None:
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with bias correction; state is one (m, v) pair per parameter."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)).astype(p.dtype)


def adam_step(weights: dict[str, np.ndarray], gradients: dict[str, np.ndarray], state: Adam | None,
              lr: float) -> Adam:
    """Functional wrapper: apply one Adam step in place and return the state."""
    if state is None:
        state = Adam(weights)
    state.step(weights, gradients, lr)
    return state


class ReduceLROnPlateau:
    """Multiply the learning rate by ``factor`` when the monitored accuracy stalls.

    A value counts as an improvement when it beats the best so far by more
    than ``min_delta``. After ``patience`` epochs without improvement the rate
    is reduced and the epoch that follows becomes the new baseline.
    """

    def __init__(self, factor=0.5, patience=5, min_lr=1e-6, min_delta=1e-4):
        self.factor, self.patience, self.min_lr, self.min_delta = factor, patience, min_lr, min_delta
        self.best: float | None = None
        self.wait = 0

    def step(self, value: float, lr: float) -> float:
        if self.best is None or value > self.best + self.min_delta:
            self.best = value
            self.wait = 0
            return lr
        self.wait += 1
        if self.wait >= self.patience:
            self.best = None
            self.wait = 0
            return max(lr * self.factor, self.min_lr)
        return lr


def reduce_lr_on_plateau(history, lr: float, factor=0.5, patience=5, min_lr=1e-6, min_delta=1e-4) -> list[float]:
    """Learning rate after each epoch of ``history`` (replays the scheduler)."""
    sched = ReduceLROnPlateau(factor, patience, min_lr, min_delta)
    out = []
    for value in history:
        lr = sched.step(value, lr)
        out.append(lr)
    return out


@dataclass
class TrainResult:
    model: SleepNet
    log: list[dict] = field(default_factory=list)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(probs.argmax(axis=-1) == labels))


def _class_sample_weights(y: np.ndarray, classes: int) -> np.ndarray:
    counts = np.bincount(y.ravel(), minlength=classes).astype(np.float64)
    w = np.where(counts > 0, counts.sum() / (classes * np.maximum(counts, 1)), 0.0)
    return w


def fit(model: SleepNet, train: tuple[np.ndarray, np.ndarray],
        validation: tuple[np.ndarray, np.ndarray] | None, cfg: TrainConfig,
        on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train ``model`` in place.

    ``train`` and ``validation`` are ``(x, y)`` with ``x`` of shape
    [n, seq, samples] and ``y`` of shape [n, seq]. One generator seeded with
    ``cfg.seed`` drives shuffling and dropout, so runs are reproducible.
    Validation accuracy (training accuracy when no validation set is given)
    feeds the plateau scheduler.
    """
    x_tr, y_tr = train
    y_tr = np.asarray(y_tr, dtype=np.int64)
    if y_tr.ndim == 1:
        y_tr = y_tr[:, None]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.epsilon)
    sched = ReduceLROnPlateau(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_min_lr, cfg.plateau_min_delta)
    lr = cfg.learning_rate
    n = len(x_tr)
    class_w = _class_sample_weights(y_tr, model.config.classes) if cfg.class_weighting else None
    result = TrainResult(model)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            loss, grads, probs = model.loss_and_grads(xb, yb, rng=rng)
            if not math.isfinite(loss):
                if cfg.dump_path:
                    from .io import save_weights

                    save_weights(model, cfg.dump_path)
                raise DivergenceDetected(f"loss became {loss} at epoch {epoch}")
            if class_w is not None:
                scale = float(class_w[yb].mean())
                grads = {k: g * scale for k, g in grads.items()}
            opt.step(model.params, grads, lr)
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=-1) == yb).sum())
        train_acc = correct / y_tr.size
        if validation is not None and len(validation[0]):
            x_va, y_va = validation
            y_va = np.asarray(y_va).reshape(len(x_va), -1)
            val_acc = accuracy(model.predict(x_va), y_va)
        else:
            val_acc = float("nan")
        entry = {
            "epoch": epoch,
            "loss": loss_sum / n,
            "train_acc": train_acc,
            "val_acc": val_acc,
            "lr": lr,
            "seconds": time.perf_counter() - t0,
        }
        result.log.append(entry)
        logger.info("epoch %d loss %.4f train_acc %.4f val_acc %.4f lr %.2e", epoch, entry["loss"],
                    train_acc, val_acc, lr)
        if on_epoch is not None:
            on_epoch(entry)
        if cfg.target_train_acc is not None and train_acc >= cfg.target_train_acc:
            break
        lr = sched.step(val_acc if not math.isnan(val_acc) else train_acc, lr)
    return result


def write_log_csv(path, log: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "train_acc", "val_acc", "lr"])
        for e in log:
            w.writerow([e["epoch"], f"{e['loss']:.6f}", f"{e['train_acc']:.6f}", f"{e['val_acc']:.6f}",
                        f"{e['lr']:.8g}"])
