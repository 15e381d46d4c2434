"""Fused neural-network operations with hand-written gradients."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, as_tensor, mul


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then ``gain * xhat + bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(out, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return mul(x, as_tensor((keep / (1.0 - p)).astype(x.dtype)))


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over positions where ``mask`` is true.

    ``logits`` has shape ``[..., V]`` and ``targets`` the leading shape.
    """
    targets = np.asarray(targets)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexError(f"target id out of range for vocabulary of size {V}")
    mask = np.ones(targets.shape, bool) if mask is None else np.asarray(mask, bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy: every position is masked")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
        grad *= (mask / count)[..., None]
        return (grad * g,)

    return Tensor._from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def causal_conv1d(x: Tensor, kernel: Tensor, dilation: int = 1, bias: Tensor | None = None) -> Tensor:
    """Kernel-3 causal dilated convolution over the time axis.

    ``x`` is ``[batch, time, c_in]`` and ``kernel`` is ``[3, c_in, c_out]``.
    Tap ``k`` reads time ``t - (2 - k) * dilation``, so ``kernel[2]`` is the
    current step; out-of-range reads are zeros (left padding).
    """
    if kernel.ndim != 3 or kernel.shape[0] != 3:
        raise ShapeError(f"causal_conv1d: kernel must be [3, c_in, c_out], got {kernel.shape}")
    if x.ndim != 3 or x.shape[-1] != kernel.shape[1]:
        raise ShapeError(f"causal_conv1d: input {x.shape} does not match kernel {kernel.shape}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    B, T, _ = x.shape
    c_out = kernel.shape[2]
    shifts = [(2 - k) * dilation for k in range(3)]

    out = np.zeros((B, T, c_out), dtype=x.dtype)
    for k, s in enumerate(shifts):
        if s < T:
            out[:, s:] += x.data[:, :T - s] @ kernel.data[k]
    parents = (x, kernel)
    if bias is not None:
        out += bias.data
        parents = parents + (bias,)

    def backward(g):
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernel.data)
        for k, s in enumerate(shifts):
            if s >= T:
                continue
            gx[:, :T - s] += g[:, s:] @ kernel.data[k].T
            gk[k] = x.data[:, :T - s].reshape(-1, x.shape[-1]).T @ g[:, s:].reshape(-1, c_out)
        grads = (gx, gk)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 1)),)
        return grads

    return Tensor._from_op(out, parents, backward)
