"""Weighted-entropy fusion of the two classifiers and beta calibration.

The gate compares confidence-weighted prediction entropies: the semantic
model's beam is chosen iff beta1 * H(semantic) < beta2 * H(transformer)
(strict), otherwise the transformer's beam, ties included.  A missing
semantic prediction (no detection in the localization window) is replaced by
the uniform distribution, whose maximal entropy makes the hybrid inherit the
transformer whenever beta1 >= beta2.

Calibration scans a beta grid over [0.01, 1.00] and keeps the pair with the
best fused top-1 accuracy on a validation set, breaking ties toward the
smaller beta1 and then the smaller beta2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural.predictions import Prediction, uniform_prediction


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionWeights:
    beta1: float
    beta2: float
    bound: float = 1.0

    def __post_init__(self):
        for beta in (self.beta1, self.beta2):
            if not 0.0 < beta <= self.bound:
                raise FusionError(f"betas must lie in (0, {self.bound}], got "
                                  f"({self.beta1}, {self.beta2})")


@dataclass(frozen=True)
class FusionDecision:
    omega: int                  # 1 -> semantic beam, 0 -> transformer beam
    chosen_beam: int
    semantic_entropy: float
    transformer_entropy: float


def entropy(probs) -> float:
    """-sum p ln p in nats with 0 * ln 0 := 0; validates the simplex."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-6:
        raise FusionError("entropy() requires a probability simplex vector")
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def fuse(semantic: Prediction | None, transformer: Prediction,
         weights: FusionWeights) -> FusionDecision:
    """Pick one model's beam by the strict weighted-entropy inequality."""
    if semantic is None:
        semantic = uniform_prediction(transformer.probs.shape[0])
    a1, a2 = semantic.entropy, transformer.entropy
    omega = 1 if weights.beta1 * a1 < weights.beta2 * a2 else 0
    chosen = semantic.argmax if omega else transformer.argmax
    return FusionDecision(omega=omega, chosen_beam=chosen,
                          semantic_entropy=a1, transformer_entropy=a2)


def fused_prediction(semantic: Prediction | None, transformer: Prediction,
                     weights: FusionWeights) -> tuple[FusionDecision, Prediction]:
    """Decision plus the full probability vector of the chosen model."""
    decision = fuse(semantic, transformer, weights)
    if decision.omega:
        winner = semantic if semantic is not None else uniform_prediction(
            transformer.probs.shape[0])
    else:
        winner = transformer
    return decision, winner


def beta_grid(step: float = 0.01, lo: float = 0.01, hi: float = 1.00) -> np.ndarray:
    span = hi - lo
    count = span / step
    if abs(count - round(count)) > 1e-9:
        raise FusionError(f"step {step} does not divide the range [{lo}, {hi}]")
    return np.round(lo + np.arange(int(round(count)) + 1) * step, 10)


@dataclass(frozen=True)
class BetaSearchResult:
    beta1: float
    beta2: float
    top1: float                     # best fused top-1 accuracy, percent
    grid: np.ndarray                # the scanned beta values
    surface: np.ndarray             # accuracy[i, j] for (beta1=grid[i], beta2=grid[j])


def grid_search_betas(val_set, semantic_model, transformer_model,
                      step: float = 0.01, bound: float = 1.0) -> BetaSearchResult:
    """Exhaustive beta scan maximizing fused top-1 accuracy.

    val_set yields (sample, label); semantic_model(sample) returns a
    Prediction or None (no detection), transformer_model(sample) a Prediction.
    Predictions are computed once and reused across the whole grid.
    """
    samples = list(val_set)
    if not samples:
        raise FusionError("empty validation set")
    a1 = np.empty(len(samples))
    a2 = np.empty(len(samples))
    sem_correct = np.empty(len(samples), dtype=bool)
    trn_correct = np.empty(len(samples), dtype=bool)
    for i, (sample, label) in enumerate(samples):
        sem = semantic_model(sample)
        trn = transformer_model(sample)
        if sem is None:
            sem = uniform_prediction(trn.probs.shape[0])
        a1[i], a2[i] = sem.entropy, trn.entropy
        sem_correct[i] = sem.argmax == label
        trn_correct[i] = trn.argmax == label

    grid = beta_grid(step, hi=bound)
    n = grid.size
    surface = np.empty((n, n))
    for i, b1 in enumerate(grid):
        # omega[i, j, sample] vectorized over (beta2, sample)
        pick_sem = b1 * a1[None, :] < grid[:, None] * a2[None, :]
        correct = np.where(pick_sem, sem_correct[None, :], trn_correct[None, :])
        surface[i] = correct.mean(axis=1) * 100.0
    best_flat = int(np.argmax(surface))          # row-major: smaller beta1, then beta2
    bi, bj = divmod(best_flat, n)
    return BetaSearchResult(beta1=float(grid[bi]), beta2=float(grid[bj]),
                            top1=float(surface[bi, bj]), grid=grid, surface=surface)


def write_surface_csv(result: BetaSearchResult, path: str) -> None:
    """(beta1, beta2, top1) rows for external plotting."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("beta1,beta2,top1\n")
        for i, b1 in enumerate(result.grid):
            for j, b2 in enumerate(result.grid):
                fh.write(f"{b1!r},{b2!r},{result.surface[i, j]!r}\n")
