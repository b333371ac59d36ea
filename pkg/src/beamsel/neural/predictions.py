"""Classifier output type shared by both models and the fusion layer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class PredictionError(ValueError):
    pass


def entropy_nats(probs: np.ndarray) -> float:
    """Shannon entropy with the 0 * ln 0 := 0 convention."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray    # simplex vector over the beam codebook
    argmax: int
    entropy: float       # nats

    def __post_init__(self):
        self.probs.flags.writeable = False

    def ranking(self) -> np.ndarray:
        """Beam ids by descending probability; ties keep the lower index."""
        return np.argsort(-self.probs, kind="stable")


def make_prediction(probs) -> Prediction:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise PredictionError(f"probs must be 1-D, got shape {p.shape}")
    if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise PredictionError("probs is not a probability simplex vector")
    return Prediction(probs=p, argmax=int(np.argmax(p)), entropy=entropy_nats(p))


def uniform_prediction(num_classes: int) -> Prediction:
    return make_prediction(np.full(num_classes, 1.0 / num_classes))


def cross_entropy(pred: Prediction, label: int) -> float:
    """-ln p_label with the probability clamped to [1e-12, 1]."""
    if not 0 <= label < pred.probs.shape[0]:
        raise PredictionError(f"label {label} out of range")
    p = min(max(float(pred.probs[label]), 1e-12), 1.0)
    return -math.log(p)
