"""Training: categorical cross-entropy, Adam, the epoch loop, and
inference-latency measurement.

The loop shuffles mini-batches from a seeded generator, runs forward passes
in train mode (dropout active, BatchNorm batch statistics) and evaluates the
validation slice in infer mode, so the train/infer separation is observable
from the records. A non-finite loss aborts immediately with the offending
epoch and batch.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Dataset, SplitPair
from .errors import ContractError, TrainingDiverged
from .model import Model
from .tensor import Tape, Tensor, backward

LOSS_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ContractError("validation_fraction must be in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    wall_time_seconds: float


def cross_entropy_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """-(1/B) sum log(probs[i, y_i]), probabilities floored at 1e-12."""
    batch, k = probs.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ContractError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in 0..{k - 1}")
    onehot = Tensor(np.eye(k)[labels])
    picked = T.tsum(T.mul(probs, onehot), axis=1)
    return T.neg(T.tmean(T.tlog(T.clip_min(picked, LOSS_FLOOR))))


class Adam:
    """Adam with bias correction; one slot pair per named parameter."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8):
    """Single-array Adam update; returns (param, m, v) for step count ``t``."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + epsilon), m, v


def _evaluate(model: Model, X: np.ndarray, y: np.ndarray,
              batch_size: int) -> tuple[float, float]:
    losses, hits, total = 0.0, 0, X.shape[0]
    for start in range(0, total, batch_size):
        xb = X[start:start + batch_size]
        yb = y[start:start + batch_size]
        probs = model.forward(xb, mode="infer")
        losses += float(cross_entropy_loss(probs, yb).data) * xb.shape[0]
        hits += int((probs.data.argmax(axis=1) == yb).sum())
    return losses / total, hits / total


def _stratified_holdout(y: np.ndarray, fraction: float,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class tail carve; returns (fit indices, holdout indices)."""
    fit_idx, hold_idx = [], []
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        k = int(round(fraction * members.size))
        k = min(k, members.size - 1)
        hold_idx.append(members[:k])
        fit_idx.append(members[k:])
    return np.concatenate(fit_idx), np.concatenate(hold_idx)


def train(model: Model, split: SplitPair, cfg: TrainConfig) -> tuple[Model, list[EpochRecord]]:
    """Fit on the training split; the test split is never touched here.

    The training split is expected to be preprocessed (oversampled and
    standardized); a validation slice is carved from it per
    ``validation_fraction`` and evaluated in infer mode each epoch.
    """
    cfg.validate()
    train_ds: Dataset = split.train
    X = train_ds.X[:, :, None] if train_ds.X.ndim == 2 else train_ds.X
    y = train_ds.y
    rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    if cfg.validation_fraction > 0 and X.shape[0] >= 2:
        fit_idx, hold_idx = _stratified_holdout(y, cfg.validation_fraction, rng)
        if hold_idx.size == 0:
            fit_idx = np.arange(X.shape[0])
            hold_idx = fit_idx
    else:
        fit_idx = np.arange(X.shape[0])
        hold_idx = fit_idx
    X_fit, y_fit = X[fit_idx], y[fit_idx]
    X_val, y_val = X[hold_idx], y[hold_idx]

    opt = Adam(model.named_parameters(), lr=cfg.lr, beta1=cfg.beta1,
               beta2=cfg.beta2, epsilon=cfg.epsilon)
    records: list[EpochRecord] = []
    n = X_fit.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        order = rng.permutation(n)
        loss_sum, hit_sum = 0.0, 0
        for bno, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X_fit[idx], y_fit[idx]
            opt.zero_grad()
            with Tape() as tape:
                probs = model.forward(xb, mode="train", rng=dropout_rng)
                loss = cross_entropy_loss(probs, yb)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bno}")
            backward(loss, tape)
            opt.step()
            loss_sum += value * xb.shape[0]
            hit_sum += int((probs.data.argmax(axis=1) == yb).sum())
        val_loss, val_acc = _evaluate(model, X_val, y_val, cfg.batch_size)
        records.append(EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / n,
            train_accuracy=hit_sum / n,
            val_loss=val_loss,
            val_accuracy=val_acc,
            wall_time_seconds=time.perf_counter() - tic))
    return model, records


def evaluate(model: Model, dataset_X: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> tuple[float, float, np.ndarray]:
    """Infer-mode loss, accuracy and the full probability matrix."""
    X = dataset_X[:, :, None] if dataset_X.ndim == 2 else dataset_X
    loss, acc = _evaluate(model, X, y, batch_size)
    probs = predict_proba(model, X, batch_size)
    return loss, acc, probs


def predict_proba(model: Model, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    X = X[:, :, None] if X.ndim == 2 else X
    chunks = [model.forward(X[s:s + batch_size], mode="infer").data
              for s in range(0, X.shape[0], batch_size)]
    return np.concatenate(chunks)


def measure_inference(model: Model, batch: np.ndarray, repetitions: int = 30) -> float:
    """Median wall-clock seconds per instance over ``repetitions`` runs.

    The input is an in-memory array, so the figure excludes any data
    loading or preprocessing. One warm-up pass runs first.
    """
    if repetitions < 10:
        raise ContractError("measure_inference needs repetitions >= 10")
    X = batch[:, :, None] if batch.ndim == 2 else batch
    model.forward(X, mode="infer")
    times = []
    for _ in range(repetitions):
        tic = time.perf_counter()
        model.forward(X, mode="infer")
        times.append(time.perf_counter() - tic)
    return float(np.median(times)) / X.shape[0]


def write_epoch_csv(records: list[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"])
        for r in records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.train_accuracy),
                             repr(r.val_loss), repr(r.val_accuracy),
                             repr(r.wall_time_seconds)])
