"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the primitives the two classifiers need: broadcast add/mul, (batched)
matmul, relu, reshape/transpose, reductions, row softmax, fused
softmax-cross-entropy, layer norm, dropout, valid 2-D convolution, and 2x2
average pooling (floor mode).  Every primitive installs a closure that
accumulates exact gradients into its parents, so `Tensor.backward()` yields
reverse-mode derivatives that finite differences can confirm.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def build(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                build(p)
            topo.append(t)

        build(self)
        self.grad = np.asarray(grad, dtype=np.float64)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def item(self) -> float:
        return float(self.data)


def _accumulate(t: Tensor, grad: np.ndarray):
    # accumulation always allocates, so storing a view here is safe: no
    # backward closure mutates an incoming gradient in place
    t.grad = grad if t.grad is None else t.grad + grad


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad or p._parents for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * c

    def backward(g):
        _accumulate(a, g * c)

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    data = a.data * mask

    def backward(g):
        _accumulate(a, g * mask)

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    data = a.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _make(data, (a,), backward)


def mean(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.shape[axis]

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / n, a.data.shape))

    return _make(data, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accumulate(a, p * (g - dot))

    return _make(p, (a,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of a (batch, classes) logit matrix; exact gradient."""
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    log_z = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    batch = z.shape[0]
    idx = np.arange(batch)
    losses = log_z[:, 0] - z[idx, labels]
    data = losses.mean()
    p = np.exp(z - log_z)

    def backward(g):
        grad = p.copy()
        grad[idx, labels] -= 1.0
        _accumulate(logits, grad * (float(g) / batch))

    return _make(data, (logits,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply a per-feature affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = gain.data * xhat + bias.data
    dim = x.data.shape[-1]

    def backward(g):
        dxhat = g * gain.data
        dvar = (dxhat * centered * (-0.5) * inv_std ** 3).sum(axis=-1, keepdims=True)
        dmu = (-dxhat * inv_std).sum(axis=-1, keepdims=True) + dvar * (-2.0 / dim) * centered.sum(axis=-1, keepdims=True)
        dx = dxhat * inv_std + dvar * (2.0 / dim) * centered + dmu / dim
        _accumulate(x, dx)
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=reduce_axes))
        _accumulate(bias, g.sum(axis=reduce_axes))

    return _make(data, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; masks drawn from the supplied generator."""
    if p <= 0.0:
        return x
    keep = rng.random(x.data.shape) >= p
    factor = 1.0 / (1.0 - p)
    data = x.data * keep * factor

    def backward(g):
        _accumulate(x, g * keep * factor)

    return _make(data, (x,), backward)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    b, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    sb, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (b, oh, ow, c, kh, kw), (sb, sh, sw, sc, sh, sw), writeable=False
    )
    return view.reshape(b, oh * ow, c * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation: x (B,C,H,W), weight (F,C,kh,kw), bias (F,)."""
    b, c, h, w = x.data.shape
    f, c2, kh, kw = weight.data.shape
    if c != c2:
        raise ValueError(f"channel mismatch: input {c} vs weight {c2}")
    if h < kh or w < kw:
        raise ValueError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    oh, ow = h - kh + 1, w - kw + 1
    cols = _im2col(x.data, kh, kw)                       # (B, OH*OW, C*kh*kw)
    wmat = weight.data.reshape(f, c * kh * kw)
    out = cols @ wmat.T + bias.data                      # (B, OH*OW, F)
    data = out.transpose(0, 2, 1).reshape(b, f, oh, ow)

    def backward(g):
        gout = g.transpose(0, 2, 3, 1).reshape(b, oh * ow, f)
        gw = np.tensordot(gout, cols, axes=([0, 1], [0, 1])).reshape(f, c, kh, kw)
        _accumulate(weight, gw)
        _accumulate(bias, gout.sum(axis=(0, 1)))
        gcols = (gout @ wmat).reshape(b, oh, ow, c, kh, kw)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + oh, j:j + ow] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        _accumulate(x, gx)

    return _make(data, (x, weight, bias), backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping average; odd trailing rows/columns are dropped."""
    b, c, h, w = x.data.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise ValueError(f"input {h}x{w} too small for 2x2 pooling")
    crop = x.data[:, :, : 2 * h2, : 2 * w2]
    data = crop.reshape(b, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        gx[:, :, : 2 * h2, : 2 * w2] = spread
        _accumulate(x, gx)

    return _make(data, (x,), backward)
