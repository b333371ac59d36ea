"""Lightweight transformer encoder over GPS / previous-beam feature triples.

Input is a T x 3 sequence (standardized longitude, standardized latitude,
previous beam index / N).  The pipeline: linear projection to d_model, add a
sinusoidal positional table, two pre-norm encoder layers (multi-head
self-attention and a two-layer feed-forward block, each with a residual
connection), a final layer norm, mean pooling over the sequence, and a linear
classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .predictions import Prediction, make_prediction


@dataclass(frozen=True)
class TransformerConfig:
    input_size: int = 3
    d_model: int = 128
    num_heads: int = 4
    num_layers: int = 2
    dim_ff: int = 512            # 4 * d_model
    dropout: float = 0.1
    max_seq_len: int = 5000
    num_classes: int = 64

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads


def positional_table(max_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, 10000^(2i/d) rates."""
    positions = np.arange(max_len)[:, None]
    rates = np.exp(np.arange(0, d_model, 2) * (-np.log(10000.0) / d_model))
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    return table


def attention(q: ad.Tensor, k: ad.Tensor, v: ad.Tensor) -> ad.Tensor:
    """softmax(Q K^T / sqrt(d_k)) V with a row-wise softmax."""
    d_k = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k, _swap_last(k))), 1.0 / np.sqrt(d_k))
    return ad.matmul(ad.softmax(scores), v)


def _swap_last(t: ad.Tensor):
    axes = list(range(len(t.shape)))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head(layer_params: dict, x: ad.Tensor, num_heads: int) -> ad.Tensor:
    """Project to per-head Q/K/V, attend, concatenate heads, project out."""
    b, t, d = x.shape
    head_dim = d // num_heads

    def proj(name):
        y = ad.add(ad.matmul(x, layer_params[f"{name}_w"]), layer_params[f"{name}_b"])
        y = ad.reshape(y, (b, t, num_heads, head_dim))
        return ad.transpose(y, (0, 2, 1, 3))        # (B, H, T, head_dim)

    heads = attention(proj("q"), proj("k"), proj("v"))
    merged = ad.reshape(ad.transpose(heads, (0, 2, 1, 3)), (b, t, d))
    return ad.add(ad.matmul(merged, layer_params["o_w"]), layer_params["o_b"])


def ffn(layer_params: dict, x: ad.Tensor) -> ad.Tensor:
    """max(0, x W1 + b1) W2 + b2."""
    hidden = ad.relu(ad.add(ad.matmul(x, layer_params["ff1_w"]), layer_params["ff1_b"]))
    return ad.add(ad.matmul(hidden, layer_params["ff2_w"]), layer_params["ff2_b"])


def _glorot(rng, shape):
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, shape)


class Transformer:
    def __init__(self, config: TransformerConfig = TransformerConfig(), seed: int = 0):
        self.config = config
        self._rng = np.random.default_rng([seed, 1])   # dropout stream
        rng = np.random.default_rng([seed, 0])
        d, ff = config.d_model, config.dim_ff

        def mat(shape):
            return ad.Tensor(_glorot(rng, shape), requires_grad=True)

        def zeros(shape):
            return ad.Tensor(np.zeros(shape), requires_grad=True)

        def ones(shape):
            return ad.Tensor(np.ones(shape), requires_grad=True)

        self.params = {"in_w": mat((config.input_size, d)), "in_b": zeros(d)}
        self.layers = []
        for i in range(config.num_layers):
            layer = {
                "q_w": mat((d, d)), "q_b": zeros(d),
                "k_w": mat((d, d)), "k_b": zeros(d),
                "v_w": mat((d, d)), "v_b": zeros(d),
                "o_w": mat((d, d)), "o_b": zeros(d),
                "ln1_g": ones(d), "ln1_b": zeros(d),
                "ff1_w": mat((d, ff)), "ff1_b": zeros(ff),
                "ff2_w": mat((ff, d)), "ff2_b": zeros(d),
                "ln2_g": ones(d), "ln2_b": zeros(d),
            }
            self.layers.append(layer)
            for name, tensor in layer.items():
                self.params[f"layer{i}_{name}"] = tensor
        self.params["lnf_g"] = ones(d)
        self.params["lnf_b"] = zeros(d)
        self.params["head_w"] = mat((d, config.num_classes))
        self.params["head_b"] = zeros(config.num_classes)
        self.positional = positional_table(config.max_seq_len, d)

    def parameters(self) -> list[ad.Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def reset_dropout_stream(self, seed: int) -> None:
        """Reposition the dropout mask stream (seeded-mask replay)."""
        self._rng = np.random.default_rng([seed, 1])

    def forward(self, seq: np.ndarray, train: bool = False) -> ad.Tensor:
        """Logits for a batch of (B, T, input_size) sequences."""
        cfg = self.config
        if seq.ndim == 2:
            seq = seq[None]
        b, t, d_in = seq.shape
        if d_in != cfg.input_size:
            raise ValueError(f"expected {cfg.input_size} features per step, got {d_in}")
        if not 1 <= t <= cfg.max_seq_len:
            raise ValueError(f"sequence length {t} outside [1, {cfg.max_seq_len}]")
        p = self.params
        drop = cfg.dropout if train else 0.0

        x = ad.add(ad.matmul(ad.Tensor(seq), p["in_w"]), p["in_b"])
        x = ad.add(x, ad.constant(self.positional[:t]))
        x = ad.dropout(x, drop, self._rng)
        for layer in self.layers:
            attended = multi_head(layer, ad.layer_norm(x, layer["ln1_g"], layer["ln1_b"]),
                                  cfg.num_heads)
            x = ad.add(x, ad.dropout(attended, drop, self._rng))
            fed = ffn(layer, ad.layer_norm(x, layer["ln2_g"], layer["ln2_b"]))
            x = ad.add(x, ad.dropout(fed, drop, self._rng))
        x = ad.layer_norm(x, p["lnf_g"], p["lnf_b"])
        pooled = ad.mean(x, axis=1)
        return ad.add(ad.matmul(pooled, p["head_w"]), p["head_b"])

    def predict(self, seq: np.ndarray) -> Prediction:
        logits = self.forward(seq if seq.ndim == 3 else seq[None])
        return make_prediction(ad.softmax(logits).data[0])
