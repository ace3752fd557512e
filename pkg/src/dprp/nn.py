"""Differentiable network primitives: convolution, pooling, cross-entropy."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ConfigError, DimensionError, InputError
from .tensor import Tensor, _result, as_tensor


def conv_output_size(n: int, kernel: int, pad: int, stride: int, strict: bool = True) -> int:
    """Output extent ``(n - kernel + 2 pad) / stride + 1``.

    With ``strict`` a non-integral or non-positive extent is an error;
    otherwise the quotient is floored (the framework convention).
    """
    span = n - kernel + 2 * pad
    if span < 0 or (strict and span % stride):
        raise ConfigError(
            f"convolution extent ({n} - {kernel} + 2*{pad})/{stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def conv2d(x: Tensor, k: Tensor, pad: int = 0, stride: int = 1) -> Tensor:
    """Cross-correlation of ``C x H x W`` (or batched ``N x C x H x W``) input
    with an ``S x C x L2 x L1`` filter bank, zero padding ``pad`` on every side."""
    x, k = as_tensor(x), as_tensor(k)
    if k.ndim != 4:
        raise DimensionError(f"filter must be 4-way S x C x L2 x L1, got {k.shape}")
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be C x H x W or N x C x H x W, got {x.shape}")
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    s_out, c_k, kh, kw = k.shape
    if c != c_k:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs filter {k.shape}")
    if stride < 1 or pad < 0:
        raise ConfigError(f"invalid padding/stride ({pad}, {stride})")
    out_h = conv_output_size(h, kh, pad, stride)
    out_w = conv_output_size(w, kw, pad, stride)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hp, wp = xp.shape[2:]
    cols = _kernels.im2col(xp, kh, kw, stride, out_h, out_w)
    kmat = k.data.reshape(s_out, c * kh * kw)
    out = (cols @ kmat.T).transpose(0, 2, 1).reshape(n, s_out, out_h, out_w)
    if squeeze:
        out = out[0]

    def _back(g):
        g4 = g[None] if squeeze else g
        gm = np.ascontiguousarray(g4.reshape(n, s_out, out_h * out_w).transpose(0, 2, 1))
        dk = (gm.reshape(-1, s_out).T @ cols.reshape(-1, c * kh * kw)).reshape(k.shape)
        dxp = _kernels.col2im(gm @ kmat, n, c, hp, wp, kh, kw, stride, out_h, out_w)
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        return (dx[0] if squeeze else dx), dk

    return _result("conv2d", np.ascontiguousarray(out), (x, k), _back)


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping average pooling over the last two axes of ``N x C x H x W``."""
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ConfigError(f"avg_pool2d: {h}x{w} not divisible by {size}")
    out = x.data.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))
    inv = 1.0 / (size * size)

    def _back(g):
        return (np.repeat(np.repeat(g * inv, size, axis=2), size, axis=3),)

    return _result("avg_pool2d", out, (x,), _back)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    inv = 1.0 / (h * w)

    def _back(g):
        return (np.broadcast_to((g * inv)[:, :, None, None], (n, c, h, w)).copy(),)

    return _result("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), _back)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"logits must be B x n_c with n_c >= 2, got {logits.shape}")
    b, n_c = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_c):
        raise InputError(f"label outside [0, {n_c})")
    logp = log_softmax(logits.data)
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def _back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / b),)

    return _result("cross_entropy", loss, (logits,), _back)
