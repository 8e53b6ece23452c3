"""Dense array operations with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``.  Spatial tensors are channels-last, either
``(H, W, C)`` or batched ``(N, H, W, C)``; weights are ``(s, s, C, C')``.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in a forward or backward value."""


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def _as_batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (H, W, C) or (N, H, W, C), got shape {x.shape}")


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


# ---------------------------------------------------------------------------
# convolution

def conv2d_forward(x, w, stride: int = 1, padding: str = "same"):
    """Cross-correlation ``O = W (x) I`` with square odd kernels."""
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weights must be (s, s, C, C'), got {w.shape}")
    s = w.shape[0]
    if s % 2 == 0:
        raise ValueError(f"kernel extent must be odd, got {s}")
    if stride < 1:
        raise ValueError("stride must be positive")
    xb, squeeze = _as_batched(x)
    if xb.shape[-1] != w.shape[2]:
        raise ValueError(f"channel mismatch: input has {xb.shape[-1]}, weights expect {w.shape[2]}")
    n, h, wd, _ = xb.shape
    if padding == "same":
        ph = same_padding(h, s, stride)
        pw = same_padding(wd, s, stride)
    elif padding == "valid":
        if h < s or wd < s:
            raise ValueError("input smaller than kernel under valid padding")
        ph = pw = (0, 0)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(xb, ((0, 0), ph, pw, (0, 0))) if (sum(ph) or sum(pw)) else xb
    # (N, Hp-s+1, Wp-s+1, C, s, s) -> stride
    win = sliding_window_view(xp, (s, s), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([4, 5, 3], [0, 1, 2]))
    cache = (xb.shape, xp.shape, win, w, stride, ph, pw, squeeze)
    return (out[0] if squeeze else out), cache


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw)``."""
    xshape, xpshape, win, w, stride, ph, pw, squeeze = cache
    d = dout[None] if squeeze else dout
    s = w.shape[0]
    ho, wo = d.shape[1], d.shape[2]
    dw = np.tensordot(win, d, axes=([0, 1, 2], [0, 1, 2]))  # (C, s, s, C')
    dw = dw.transpose(1, 2, 0, 3)
    dcols = np.tensordot(d, w, axes=([3], [3]))  # (N, Ho, Wo, s, s, C)
    dxp = np.zeros(xpshape, dtype=d.dtype)
    for ki in range(s):
        for kj in range(s):
            dxp[:, ki:ki + stride * (ho - 1) + 1:stride,
                kj:kj + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, ki, kj, :]
    h, wd = xshape[1], xshape[2]
    dx = dxp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + wd, :]
    if squeeze:
        dx = dx[0]
    return np.ascontiguousarray(dx), dw


def conv_transpose2d_forward(x, w, stride: int):
    """Transposed convolution without padding; output extent ``(h-1)*stride + s``."""
    xb, squeeze = _as_batched(x)
    if xb.shape[-1] != w.shape[2]:
        raise ValueError(f"channel mismatch: input has {xb.shape[-1]}, weights expect {w.shape[2]}")
    s = w.shape[0]
    n, h, wd, _ = xb.shape
    out = np.zeros((n, (h - 1) * stride + s, (wd - 1) * stride + s, w.shape[3]), dtype=xb.dtype)
    for ki in range(s):
        for kj in range(s):
            out[:, ki:ki + stride * (h - 1) + 1:stride,
                kj:kj + stride * (wd - 1) + 1:stride, :] += xb @ w[ki, kj]
    return (out[0] if squeeze else out), (xb, w, stride, squeeze)


def conv_transpose2d_backward(dout, cache):
    xb, w, stride, squeeze = cache
    d = dout[None] if squeeze else dout
    s = w.shape[0]
    _, h, wd, _ = xb.shape
    dx = np.zeros_like(xb)
    dw = np.zeros_like(w)
    for ki in range(s):
        for kj in range(s):
            sl = d[:, ki:ki + stride * (h - 1) + 1:stride, kj:kj + stride * (wd - 1) + 1:stride, :]
            dx += sl @ w[ki, kj].T
            dw[ki, kj] = np.tensordot(xb, sl, axes=([0, 1, 2], [0, 1, 2]))
    return (dx[0] if squeeze else dx), dw


def upsample_nearest_forward(x, factor: int):
    xb, squeeze = _as_batched(x)
    out = xb.repeat(factor, axis=1).repeat(factor, axis=2)
    return (out[0] if squeeze else out), (factor, squeeze)


def upsample_nearest_backward(dout, cache):
    factor, squeeze = cache
    d = dout[None] if squeeze else dout
    n, h, w, c = d.shape
    dx = d.reshape(n, h // factor, factor, w // factor, factor, c).sum(axis=(2, 4))
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# dense / pointwise

def linear_forward(x, w, b):
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dimension mismatch: input trailing extent {x.shape[-1]}, weights {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"bias shape {b.shape} does not match weights {w.shape}")
    # einsum keeps each row's reduction order independent of how many rows
    # are in the batch, so a pillar's features never depend on its neighbours
    return np.einsum("...d,dc->...c", x, w) + b, (x, w)


def linear_backward(dout, cache):
    """Returns ``(dx, dw, db)``."""
    x, w = cache
    d2 = dout.reshape(-1, dout.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return dout @ w.T, x2.T @ d2, d2.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(dout, mask):
    return dout * mask


def sigmoid(x):
    # split by sign to keep exp() bounded
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_forward(x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def softmax(x, axis: int = -1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_forward(x):
    y = softmax(x, axis=-1)
    return y, y


def softmax_backward(dout, y):
    return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


def add_forward(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a + b, None


def add_backward(dout, cache=None):
    return dout, dout


def concat_forward(xs, axis: int = -1):
    sizes = [x.shape[axis] for x in xs]
    return np.concatenate(xs, axis=axis), (sizes, axis)


def concat_backward(dout, cache):
    sizes, axis = cache
    cuts = np.cumsum(sizes)[:-1]
    return np.split(dout, cuts, axis=axis)


# ---------------------------------------------------------------------------
# normalization

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel normalization over every axis except the last.

    In train mode the running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = gamma * xhat + beta
    return out, (xhat, inv, gamma, train, axes)


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv, gamma, train, axes = cache
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    m = xhat.size // xhat.shape[-1]
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# pooling

def masked_max_forward(points, counts):
    """Max over the first ``counts[p]`` rows of each ``points[p]``.

    Rows at index >= count are never read.  Ties resolve to the lowest row.
    """
    counts = np.asarray(counts, dtype=np.int64)
    p, n, c = points.shape
    if counts.shape != (p,):
        raise ValueError(f"expected {p} counts, got {counts.shape}")
    if np.any(counts <= 0):
        raise ValueError("masked_max requires every count >= 1; filter empty pillars first")
    if np.any(counts > n):
        raise ValueError("count exceeds the padded row extent")
    valid = np.arange(n)[None, :] < counts[:, None]
    masked = np.where(valid[:, :, None], points, -np.inf)
    arg = masked.argmax(axis=1)  # first occurrence on ties
    out = np.take_along_axis(points, arg[:, None, :], axis=1)[:, 0, :]
    return out, (arg, points.shape)


def masked_max_backward(dout, cache):
    arg, shape = cache
    p, n, c = shape
    dx = np.zeros(shape, dtype=dout.dtype)
    np.put_along_axis(dx, arg[:, None, :], dout[:, None, :], axis=1)
    return dx
