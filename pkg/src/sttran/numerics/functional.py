"""Differentiable neural-network operations on :class:`Tensor`."""

from __future__ import annotations

import logging

import numpy as np

from .tensor import NumericError, ShapeError, Tensor, _unbroadcast, get_dtype

log = logging.getLogger(__name__)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w (+ b)`` for x of shape (N, D_in) and w of shape (D_in, D_out)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    y = x @ w
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not fit weight {w.shape}")
        y = y + b
    return y


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    # np.maximum lets NaN through so non-finite losses are not masked
    return Tensor._from_op(np.maximum(x.data, 0.0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    y[~pos] = ez / (1.0 + ez)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax. ``mask`` (broadcastable bool) marks allowed logits."""
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("softmax received NaN input")
    if mask is not None:
        xd = np.where(mask, xd, -np.inf)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("log_softmax received NaN input")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return Tensor._from_op(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row softmax."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    logp = log_softmax(logits, axis=1)
    picked = logp.data[np.arange(len(t)), t]
    n = len(t)

    def backward(g):
        out = np.zeros_like(logp.data)
        out[np.arange(n), t] = -g / n
        return (out,)

    return Tensor._from_op(np.asarray(-picked.mean(), dtype=logits.data.dtype), (logp,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data
    out = xhat * gd + bias.data

    def backward(g):
        dxhat = g * gd
        dx = rstd * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape)

    return Tensor._from_op(out, (x, gain, bias), backward)


class BatchNormStats:
    """Running mean/variance buffers of a batch-norm layer."""

    def __init__(self, dim: int, momentum: float = 0.1, dtype=None):
        dt = dtype or get_dtype()
        self.running_mean = np.zeros(dim, dtype=dt)
        self.running_var = np.ones(dim, dtype=dt)
        self.momentum = momentum


def batch_norm(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    stats: BatchNormStats,
    train: bool,
    eps: float = 1e-5,
) -> Tensor:
    """Normalise each column of ``x`` (N, D) by batch or running statistics.

    Training mode updates the running buffers with ``stats.momentum``. A
    single-row batch cannot be normalised by its own statistics, so it falls
    back to the running values.
    """
    xd = x.data
    if train and xd.shape[0] < 2:
        log.warning("batch_norm: batch of size 1 in train mode, using running statistics")
        train = False
    if not train:
        rstd = 1.0 / np.sqrt(stats.running_var + eps)
        scale = (gain.data * rstd).astype(xd.dtype)
        shift = (bias.data - stats.running_mean * gain.data * rstd).astype(xd.dtype)
        xhat = (xd - stats.running_mean) * rstd

        def backward_eval(g):
            return g * scale, (g * xhat).sum(axis=0), g.sum(axis=0)

        return Tensor._from_op(xd * scale + shift, (x, gain, bias), backward_eval)

    n = xd.shape[0]
    mu = xd.mean(axis=0)
    xc = xd - mu
    var = (xc * xc).mean(axis=0)
    m = stats.momentum
    stats.running_mean = ((1 - m) * stats.running_mean + m * mu).astype(stats.running_mean.dtype)
    unbiased = var * n / (n - 1)
    stats.running_var = ((1 - m) * stats.running_var + m * unbiased).astype(stats.running_var.dtype)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return Tensor._from_op(xhat * gd + bias.data, (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x: (N, C_in, H, W); w: (C_out, C_in, k, k)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not fit kernel {w.shape}")
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} with stride {s} does not fit input {x.shape}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * k * k)
    wmat = w.data.reshape(cout, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        gb = g2.sum(axis=0) if b is not None else None
        gcols = (g2 @ wmat).reshape(n, ho, wo, cin, k, k)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, backward)

