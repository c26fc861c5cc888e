"""Forward/backward kernels for every layer the network uses.

All kernels are pure functions: forward returns (output, cache) and backward
consumes that cache exactly once. Images are channels-last, (h, w, c) for a
single image or (n, h, w, c) batched; dense activations are (features,) or
(n, features). Gradients follow the analytic transpose of each forward map
and are exercised against central finite differences in the test suite.

Conventions fixed here and relied on elsewhere:
  * conv2d uses "same" zero padding (pad = kernel//2) and odd kernels;
  * maxpool is 2x2, stride 2, odd trailing rows/columns dropped, ties in a
    window resolved to the first position in row-major scan order;
  * relu'(0) = 0;
  * dropout is inverted (kept units scaled by 1/(1-rate)) so inference is
    the exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, RangeError, UsageError
from .tensor import Rng, require_finite


def _batched(x, kind):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"{kind} expects (h,w,c) or (n,h,w,c) input, got shape {tuple(x.shape)}")


def _require_cache(cache, kind):
    if cache is None:
        raise UsageError(f"{kind}_backward needs the cache from {kind}_forward")
    return cache


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

@dataclass
class Conv2dCache:
    x_padded: np.ndarray
    x_shape: tuple
    stride: int
    pad: int
    weights: np.ndarray
    squeeze: bool


def conv2d_forward(x, weights, bias, stride: int = 1):
    """Same-padded 2-D convolution.

    weights: (k, k, c_in, c_out), bias: (c_out,). Output spatial size is
    ceil(h/stride) x ceil(w/stride); samples outside the border read zero.
    """
    x, squeeze = _batched(x, "conv2d")
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 4 or weights.shape[0] != weights.shape[1]:
        raise DimensionError(f"conv2d weights must be (k,k,c_in,c_out), got {tuple(weights.shape)}")
    k = weights.shape[0]
    if k % 2 != 1:
        raise DimensionError(f"conv2d supports odd kernels only, got k={k}")
    if stride < 1:
        raise RangeError(f"conv2d stride must be >= 1, got {stride}")
    n, h, w, c_in = x.shape
    if c_in != weights.shape[2]:
        raise DimensionError(
            f"conv2d channel mismatch: input has {c_in} channels, weights expect {weights.shape[2]}"
        )
    c_out = weights.shape[3]
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias must be ({c_out},), got {tuple(bias.shape)}")

    pad = k // 2
    ho = -(-h // stride)
    wo = -(-w // stride)
    # Right/bottom padding sized so every tap of the last output lands in-buffer.
    ph = max((ho - 1) * stride + k - pad - h, 0)
    pw = max((wo - 1) * stride + k - pad - w, 0)
    xp = np.zeros((n, pad + h + ph, pad + w + pw, c_in), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w, :] = x

    y = np.broadcast_to(bias.astype(x.dtype, copy=False), (n, ho, wo, c_out)).copy()
    for dy in range(k):
        for dx in range(k):
            xs = xp[:, dy:dy + (ho - 1) * stride + 1:stride,
                    dx:dx + (wo - 1) * stride + 1:stride, :]
            y += xs @ weights[dy, dx]
    cache = Conv2dCache(xp, x.shape, stride, pad, weights, squeeze)
    return (y[0] if squeeze else y), cache


def conv2d_backward(grad_out, cache: Conv2dCache):
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    cache = _require_cache(cache, "conv2d")
    gy = np.asarray(grad_out)
    if cache.squeeze:
        gy = gy[None]
    xp, (n, h, w, c_in) = cache.x_padded, cache.x_shape
    k = cache.weights.shape[0]
    s, pad = cache.stride, cache.pad
    ho, wo = gy.shape[1], gy.shape[2]

    grad_bias = gy.sum(axis=(0, 1, 2))
    grad_w = np.zeros_like(cache.weights)
    gxp = np.zeros_like(xp)
    for dy in range(k):
        for dx in range(k):
            xs = xp[:, dy:dy + (ho - 1) * s + 1:s, dx:dx + (wo - 1) * s + 1:s, :]
            grad_w[dy, dx] = np.tensordot(xs, gy, axes=([0, 1, 2], [0, 1, 2]))
            gxp[:, dy:dy + (ho - 1) * s + 1:s, dx:dx + (wo - 1) * s + 1:s, :] += gy @ cache.weights[dy, dx].T
    grad_x = gxp[:, pad:pad + h, pad:pad + w, :]
    if cache.squeeze:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_bias


# ---------------------------------------------------------------------------
# maxpool 2x2 / stride 2
# ---------------------------------------------------------------------------

@dataclass
class MaxPoolCache:
    argmax: np.ndarray      # (n, h2, w2, c) flat window index, row-major
    x_shape: tuple
    squeeze: bool


def _pool_windows(x):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :h2 * 2, :w2 * 2, :]
    win = xc.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    return win.reshape(n, h2, w2, 4, c), h2, w2


def maxpool_forward(x):
    """2x2 stride-2 max pooling; returns pooled output and argmax cache."""
    x, squeeze = _batched(x, "maxpool")
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise DimensionError(f"maxpool needs spatial size >= 2x2, got {tuple(x.shape)}")
    win, h2, w2 = _pool_windows(x)
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    cache = MaxPoolCache(idx, x.shape, squeeze)
    return (y[0] if squeeze else y), cache


def maxpool_backward(grad_out, cache: MaxPoolCache):
    cache = _require_cache(cache, "maxpool")
    gy = np.asarray(grad_out)
    if cache.squeeze:
        gy = gy[None]
    n, h, w, c = cache.x_shape
    h2, w2 = gy.shape[1], gy.shape[2]
    gwin = np.zeros((n, h2, w2, 4, c), dtype=gy.dtype)
    np.put_along_axis(gwin, cache.argmax[:, :, :, None, :], gy[:, :, :, None, :], axis=3)
    gx = np.zeros(cache.x_shape, dtype=gy.dtype)
    gx[:, :h2 * 2, :w2 * 2, :] = (
        gwin.reshape(n, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h2 * 2, w2 * 2, c)
    )
    if cache.squeeze:
        gx = gx[0]
    return gx


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

@dataclass
class DenseCache:
    x: np.ndarray
    weights: np.ndarray
    squeeze: bool


def dense_forward(x, weights, bias):
    """Affine map y = x @ weights + bias; weights are (d_in, d_out)."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.ndim != 2:
        raise DimensionError(f"dense expects (features,) or (n,features), got {tuple(x.shape)}")
    if x.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense shape mismatch: input {tuple(x.shape)} vs weights {tuple(weights.shape)}")
    y = x @ weights + bias
    cache = DenseCache(x, weights, squeeze)
    return (y[0] if squeeze else y), cache


def dense_backward(grad_out, cache: DenseCache):
    cache = _require_cache(cache, "dense")
    gy = np.asarray(grad_out)
    if cache.squeeze:
        gy = gy[None]
    grad_x = gy @ cache.weights.T
    grad_w = cache.x.T @ gy
    grad_b = gy.sum(axis=0)
    if cache.squeeze:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# relu / flatten
# ---------------------------------------------------------------------------

@dataclass
class ReluCache:
    positive: np.ndarray


def relu_forward(x):
    x = np.asarray(x)
    positive = x > 0
    return np.where(positive, x, 0.0).astype(x.dtype, copy=False), ReluCache(positive)


def relu_backward(grad_out, cache: ReluCache):
    cache = _require_cache(cache, "relu")
    gy = np.asarray(grad_out)
    return np.where(cache.positive, gy, 0.0).astype(gy.dtype, copy=False)


@dataclass
class FlattenCache:
    x_shape: tuple
    squeeze: bool


def flatten_forward(x):
    """Row-major flatten of each example's (h, w, c) block."""
    x, squeeze = _batched(x, "flatten")
    y = x.reshape(x.shape[0], -1)
    cache = FlattenCache(x.shape, squeeze)
    return (y[0] if squeeze else y), cache


def flatten_backward(grad_out, cache: FlattenCache):
    cache = _require_cache(cache, "flatten")
    gy = np.asarray(grad_out)
    if cache.squeeze:
        gy = gy[None]
    gx = gy.reshape(cache.x_shape)
    if cache.squeeze:
        gx = gx[0]
    return gx


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

@dataclass
class DropoutCache:
    mask: np.ndarray | None   # None in infer mode
    rate: float


def dropout_forward(x, rate: float, mode: str, rng: Rng | None = None):
    """Inverted dropout.

    In train mode each unit is kept with probability 1-rate and scaled by
    1/(1-rate); the mask is drawn from rng and stored for backward. Infer
    mode is the bit-exact identity.
    """
    x = np.asarray(x)
    if not 0.0 <= rate < 1.0:
        raise RangeError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer":
        return x, DropoutCache(None, rate)
    if mode != "train":
        raise UsageError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    if rng is None:
        raise UsageError("dropout in train mode needs an rng")
    mask = rng.random(x.shape) >= rate
    y = np.where(mask, x / (1.0 - rate), 0.0).astype(x.dtype, copy=False)
    return y, DropoutCache(mask, rate)


def dropout_backward(grad_out, cache: DropoutCache):
    cache = _require_cache(cache, "dropout")
    gy = np.asarray(grad_out)
    if cache.mask is None:
        return gy
    return np.where(cache.mask, gy / (1.0 - cache.rate), 0.0).astype(gy.dtype, copy=False)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def softmax(z):
    """Stable softmax over the last axis: exp(z - max) normalized to sum 1."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 1:
        raise DimensionError("softmax needs at least one class")
    require_finite(z, "softmax input")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
