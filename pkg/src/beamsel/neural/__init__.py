"""From-scratch differentiable kernels and the two beam classifiers."""

from .predictions import (
    Prediction,
    PredictionError,
    cross_entropy,
    entropy_nats,
    make_prediction,
    uniform_prediction,
)
from .features import downscale_mask, sequence_features
from .lenet import LeNet, LeNetConfig
from .transformer import Transformer, TransformerConfig, attention, ffn, multi_head
from .training import (
    Adam,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    TrainingError,
    evaluate_loss,
    train_classifier,
)
from .checkpoint import CheckpointError, load_checkpoint, restore_params, save_checkpoint

__all__ = [
    "Adam",
    "CheckpointError",
    "LeNet",
    "LeNetConfig",
    "Prediction",
    "PredictionError",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "TrainingError",
    "Transformer",
    "TransformerConfig",
    "attention",
    "cross_entropy",
    "downscale_mask",
    "entropy_nats",
    "evaluate_loss",
    "ffn",
    "load_checkpoint",
    "make_prediction",
    "multi_head",
    "restore_params",
    "save_checkpoint",
    "sequence_features",
    "train_classifier",
    "uniform_prediction",
]
