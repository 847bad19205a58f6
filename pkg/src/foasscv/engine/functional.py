"""Differentiable operations used by the FOA-Conv3D model.

Volumes are channel-last: ``(batch, depth, time, band, channels)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != {weight.shape[0]}")
    out = x.data @ weight.data
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = parents + (bias,)

    def backward(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make(out, parents, backward, "linear")


def flatten(x) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over every element."""
    pred = as_tensor(pred)
    target = np.asarray(getattr(target, "data", target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target
    n = diff.size
    return make(np.asarray(np.mean(diff ** 2)), (pred,),
                lambda g: (g * 2.0 * diff / n,), "mse")


def _im2col(x):
    """(N, D, T, B, C) -> (N*D*T*B, C*9) zero-padded 3x3 patches, columns
    ordered (c, i, j) like the kernel."""
    n, d, t, b, c = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    return cols.reshape(n * d * t * b, c * 9)


def conv3d(x, weight, bias=None) -> Tensor:
    """1x3x3 cross-correlation with zero "same" padding on time and band.

    Parameters
    ----------
    x : Tensor of shape (N, D, T, B, C_in)
    weight : Tensor of shape (C_out, C_in, 1, 3, 3)
    bias : Tensor of shape (C_out,), optional

    Returns
    -------
    Tensor of shape (N, D, T, B, C_out)
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    n, d, t, b, c = x.shape
    c_out, c_in, kd, kh, kw = weight.shape
    if (kd, kh, kw) != (1, 3, 3):
        raise ValueError("conv3d supports 1x3x3 kernels only")
    if c_in != c:
        raise ValueError(f"conv3d: input has {c} channels, kernel expects {c_in}")
    m = n * d * t * b
    w2 = weight.data.reshape(c_out, c_in * 9)
    out = _im2col(x.data) @ w2.T
    if bias is not None:
        out += bias.data
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def backward(g):
        g2 = g.reshape(m, c_out)
        # the column matrix is 9x the input; rebuilding it is cheaper than keeping it
        gw = (_im2col(x.data).T @ g2).T.reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(n, d, t, b, c, 3, 3)
            gxp = np.zeros((n, d, t + 2, b + 2, c), dtype=gcols.dtype)
            for i in range(3):
                for j in range(3):
                    gxp[:, :, i:i + t, j:j + b, :] += gcols[..., i, j]
            gx = gxp[:, :, 1:-1, 1:-1, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make(out.reshape(n, d, t, b, c_out), parents, backward, "conv3d")


def maxpool3d(x) -> Tensor:
    """Max over non-overlapping (1, 2, 2) windows; odd trailing rows dropped.

    Ties go to the first element in (time, band) row-major order.
    """
    x = as_tensor(x)
    n, d, t, b, c = x.shape
    t2, b2 = t // 2, b // 2
    views = [(i, j) for i in range(2) for j in range(2)]
    stacked = np.stack([x.data[:, :, i:2 * t2:2, j:2 * b2:2, :] for i, j in views])
    idx = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, idx[None], axis=0)[0]

    def backward(g):
        gx = np.zeros_like(x.data)
        for k, (i, j) in enumerate(views):
            gx[:, :, i:2 * t2:2, j:2 * b2:2, :] = g * (idx == k)
        return (gx,)

    return make(out, (x,), backward, "maxpool3d")


def one_pole_smooth(x, alpha, init=None) -> Tensor:
    """First-order recursive smoothing along axis 1 (frames).

    ``y[:, n] = (1 - alpha) * x[:, n] + alpha * y[:, n - 1]``, ``y[:, -1] = init``.

    Parameters
    ----------
    x : Tensor of shape (N, frames, bands, K)
    alpha : Tensor of shape (bands,)
    init : ndarray broadcastable to (N, bands, K), optional (zeros)
    """
    x, alpha = as_tensor(x), as_tensor(alpha)
    a = alpha.data[:, None]
    frames = x.shape[1]
    y = np.empty_like(x.data)
    prev = np.zeros_like(x.data[:, 0]) if init is None else np.broadcast_to(
        np.asarray(init, x.dtype), x.data[:, 0].shape)
    start = prev
    for k in range(frames):
        prev = (1.0 - a) * x.data[:, k] + a * prev
        y[:, k] = prev

    def backward(g):
        gx = np.empty_like(x.data)
        galpha = np.zeros(alpha.shape, dtype=x.dtype)
        lam = np.zeros_like(g[:, 0])
        for k in range(frames - 1, -1, -1):
            lam = g[:, k] + a * lam
            gx[:, k] = (1.0 - a) * lam
            y_prev = y[:, k - 1] if k > 0 else start
            galpha += np.sum(lam * (y_prev - x.data[:, k]), axis=(0, 2))
        return gx, galpha

    return make(y, (x, alpha), backward, "smooth")


def sscv_normalize(r, floor=1e-12) -> Tensor:
    """``[log r0, r1/r0, ...]`` along the last axis with ``r0`` clamped at ``floor``."""
    r = as_tensor(r)
    r0 = r.data[..., :1]
    live = r0 > floor
    r0c = np.where(live, r0, floor)
    rest = r.data[..., 1:] / r0c
    out = np.concatenate([np.log(r0c), rest], axis=-1)

    def backward(g):
        gr = np.empty_like(r.data)
        gr[..., 1:] = g[..., 1:] / r0c
        g0 = g[..., :1] / r0c - np.sum(g[..., 1:] * rest, axis=-1, keepdims=True) / r0c
        gr[..., :1] = g0 * live
        return (gr,)

    return make(out, (r,), backward, "sscv_normalize")
