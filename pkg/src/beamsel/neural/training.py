"""Adam optimizer and the mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .predictions import Prediction


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    """Loss became non-finite."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    lr_reduction_factor: float = 0.1
    plateau_patience: int = 3        # epochs without val improvement before reducing
    plateau_min_delta: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.epochs) < 1:
            raise TrainingError("batch_size and epochs must be positive")
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be >= 0")


class Adam:
    """Adam with bias correction; state per parameter tensor."""

    def __init__(self, params: list[ad.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise TrainingError("step() called before backward()")
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)    # per epoch
    val_loss: list[float] = field(default_factory=list)
    val_top1: list[float] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)
    best_epoch: int = -1       # epoch whose parameters were kept


def _batch_loss(model, x, labels, train):
    logits = model.forward(x, train=train)
    return ad.softmax_cross_entropy(logits, labels)


def evaluate_loss(model, x, labels, batch_size: int = 256) -> tuple[float, float]:
    """(mean cross-entropy, top-1 accuracy) over a dataset, eval mode."""
    total, correct = 0.0, 0
    n = x.shape[0]
    for start in range(0, n, batch_size):
        xb = x[start:start + batch_size]
        yb = labels[start:start + batch_size]
        logits = model.forward(xb, train=False)
        total += ad.softmax_cross_entropy(logits, yb).item() * xb.shape[0]
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return total / n, correct / n


def train_classifier(model, x: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                     val_x: np.ndarray | None = None,
                     val_labels: np.ndarray | None = None) -> TrainResult:
    """Seeded epoch loop with plateau learning-rate reduction.

    The plateau rule watches validation loss (training loss when no validation
    split is given): no improvement beyond plateau_min_delta for
    plateau_patience consecutive epochs multiplies the rate by
    lr_reduction_factor.  The parameters of the best monitored epoch are kept,
    so an oscillating final epoch cannot discard an earlier optimum.
    """
    if x.shape[0] == 0:
        raise TrainingError("empty training set")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    optimizer = Adam(params, cfg.learning_rate,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    result = TrainResult()
    best_seen = np.inf           # strict minimum, owns the parameter snapshot
    plateau_ref = np.inf         # last value that counted as an improvement
    best_snapshot = None
    stall = 0
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            optimizer.zero_grad()
            loss = _batch_loss(model, x[idx], labels[idx], train=True)
            loss.backward()
            optimizer.step()
            epoch_total += loss.item() * idx.size
        train_loss = epoch_total / n
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"training loss became {train_loss}")
        result.train_loss.append(train_loss)
        result.lr_history.append(optimizer.lr)

        if val_x is not None:
            monitored, top1 = evaluate_loss(model, val_x, val_labels, cfg.batch_size)
            result.val_loss.append(monitored)
            result.val_top1.append(top1)
        else:
            monitored = train_loss
        if monitored < best_seen:
            best_seen = monitored
            best_snapshot = [p.data.copy() for p in params]
            result.best_epoch = epoch
        if plateau_ref - monitored > cfg.plateau_min_delta:
            plateau_ref = monitored
            stall = 0
        else:
            stall += 1
            if stall >= cfg.plateau_patience:
                optimizer.lr *= cfg.lr_reduction_factor
                stall = 0
    if best_snapshot is not None:
        for p, snap in zip(params, best_snapshot):
            p.data = snap
    return result
