"""LeNet5-style classifier over binary target masks.

Default architecture (32x32 input): conv 6@5x5 -> relu -> avgpool2 ->
conv 16@5x5 -> relu -> avgpool2 -> flatten(400) -> fc 120 -> relu ->
fc 84 -> relu -> fc classes -> softmax.  The rectifier replaces the
historical saturating activation.  An optional GPS side-channel appends
extra features at the flatten stage (the "position in the classifier head"
baseline variant).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .predictions import Prediction, make_prediction


@dataclass(frozen=True)
class LeNetConfig:
    input_size: int = 32
    conv_channels: tuple[int, int] = (6, 16)
    kernel_size: int = 5
    fc_dims: tuple[int, int] = (120, 84)
    num_classes: int = 64
    extra_features: int = 0     # appended at the flatten stage (e.g. GPS)

    def spatial_sizes(self) -> tuple[int, int, int, int]:
        s1 = self.input_size - self.kernel_size + 1
        p1 = s1 // 2
        s2 = p1 - self.kernel_size + 1
        p2 = s2 // 2
        if min(s1, p1, s2, p2) < 1:
            raise ValueError(f"input_size {self.input_size} too small for kernel "
                             f"{self.kernel_size} with two conv/pool stages")
        return s1, p1, s2, p2

    @property
    def flat_dim(self) -> int:
        *_, p2 = self.spatial_sizes()
        return self.conv_channels[1] * p2 * p2


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class LeNet:
    def __init__(self, config: LeNetConfig = LeNetConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        c1, c2 = config.conv_channels
        f1, f2 = config.fc_dims
        flat = config.flat_dim + config.extra_features

        def param(shape, fan_in):
            return ad.Tensor(_he_uniform(rng, shape, fan_in), requires_grad=True)

        def zeros(shape):
            return ad.Tensor(np.zeros(shape), requires_grad=True)

        self.params = {
            "conv1_w": param((c1, 1, k, k), k * k),
            "conv1_b": zeros(c1),
            "conv2_w": param((c2, c1, k, k), c1 * k * k),
            "conv2_b": zeros(c2),
            "fc1_w": param((flat, f1), flat),
            "fc1_b": zeros(f1),
            "fc2_w": param((f1, f2), f1),
            "fc2_b": zeros(f2),
            "fc3_w": param((f2, config.num_classes), f2),
            "fc3_b": zeros(config.num_classes),
        }

    def parameters(self) -> list[ad.Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def forward(self, masks: np.ndarray, extra: np.ndarray | None = None,
                train: bool = False) -> ad.Tensor:
        """Logits for a batch of (B, size, size) binary masks."""
        cfg = self.config
        if masks.ndim == 2:
            masks = masks[None]
        if masks.shape[1:] != (cfg.input_size, cfg.input_size):
            raise ValueError(f"expected {cfg.input_size}x{cfg.input_size} masks, "
                             f"got {masks.shape[1:]}")
        if not np.isin(masks, (0.0, 1.0)).all():
            raise ValueError("mask values must be binary")
        x = ad.Tensor(masks[:, None, :, :])
        p = self.params
        x = ad.relu(ad.conv2d(x, p["conv1_w"], p["conv1_b"]))
        x = ad.avg_pool2(x)
        x = ad.relu(ad.conv2d(x, p["conv2_w"], p["conv2_b"]))
        x = ad.avg_pool2(x)
        x = ad.reshape(x, (x.shape[0], cfg.flat_dim))
        if cfg.extra_features:
            if extra is None or extra.shape != (x.shape[0], cfg.extra_features):
                raise ValueError(f"model expects {cfg.extra_features} extra features per sample")
            x = _concat_features(x, extra)
        x = ad.relu(ad.add(ad.matmul(x, p["fc1_w"]), p["fc1_b"]))
        x = ad.relu(ad.add(ad.matmul(x, p["fc2_w"]), p["fc2_b"]))
        return ad.add(ad.matmul(x, p["fc3_w"]), p["fc3_b"])

    def predict(self, mask: np.ndarray, extra: np.ndarray | None = None) -> Prediction:
        logits = self.forward(mask[None] if mask.ndim == 2 else mask,
                              extra=None if extra is None else np.atleast_2d(extra))
        probs = ad.softmax(logits).data[0]
        return make_prediction(probs)


def _concat_features(x: ad.Tensor, extra: np.ndarray) -> ad.Tensor:
    """Append constant side-features to a (B, D) activation tensor."""
    const = np.asarray(extra, dtype=np.float64)
    data = np.hstack([x.data, const])
    d = x.data.shape[1]

    def backward(g):
        ad._accumulate(x, g[:, :d])

    return ad._make(data, (x,), backward)
