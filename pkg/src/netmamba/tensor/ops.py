"""Differentiable operations.

Each op computes its forward value with numpy and registers a closure for
the reverse pass.  Composite layers (norms, softmax, convolution, losses)
are fused into single nodes with hand-derived adjoints, which keeps the
tape short and the Python overhead per step low.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

from ..errors import ShapeMismatch
from .core import Tensor, as_tensor, make_op

_SQRT_HALF = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def back(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return make_op(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return make_op(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product with broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(out, (a, b), back)


# -- elementwise nonlinearities


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1 - out),))


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    out = np.logaddexp(0, a.data).astype(a.dtype, copy=False)
    return make_op(out, (a,), lambda g: (g * expit(a.data),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    out = a.data * s
    return make_op(out, (a,), lambda g: (g * (s * (1 + a.data * (1 - s))),))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    out = (x * cdf).astype(a.dtype, copy=False)

    def back(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return make_op(out, (a,), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1 - out * out),))


# -- reductions and shape plumbing


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(np.asarray(out), (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    basic = not _is_advanced(idx)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(np.array(out, copy=True), (a,), back)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def gather_rows(a, index: np.ndarray) -> Tensor:
    """out[b, k, :] = a[b, index[b, k], :] for a of shape (B, L, D)."""
    a = as_tensor(a)
    index = np.asarray(index)
    if a.ndim != 3 or index.ndim != 2 or index.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"gather_rows {a.shape} with index {index.shape}")
    rows = np.arange(a.shape[0])[:, None]
    out = a.data[rows, index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, index), g)
        return (full,)

    return make_op(out, (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return make_op(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} to {shape}") from exc
    return make_op(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


# -- normalization


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeMismatch(f"layer_norm weight {weight.shape} for input {x.shape}")
    mu = x.data.mean(-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * weight.data + bias.data

    def back(g):
        gw = _unbroadcast(g * xhat, weight.shape) if weight.requires_grad else None
        gb = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * weight.data
            gx = rstd * (gh - gh.mean(-1, keepdims=True) - xhat * (gh * xhat).mean(-1, keepdims=True))
        return gx, gw, gb

    return make_op(out, (x, weight, bias), back)


def rms_norm(x, weight, eps: float = 1e-5) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.shape != x.shape[-1:]:
        raise ShapeMismatch(f"rms_norm weight {weight.shape} for input {x.shape}")
    rstd = 1.0 / np.sqrt((x.data * x.data).mean(-1, keepdims=True) + eps)
    xhat = x.data * rstd
    out = xhat * weight.data

    def back(g):
        gw = _unbroadcast(g * xhat, weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * weight.data
            gx = rstd * (gh - xhat * (gh * xhat).mean(-1, keepdims=True))
        return gx, gw

    return make_op(out, (x, weight), back)


# -- softmax family


def streaming_softmax_np(x: np.ndarray, axis: int = -1, block: int = 256) -> np.ndarray:
    """Softmax via one blocked pass of running (max, normalizer) then a rescale.

    Never forms exp() of an unshifted value, so inputs of any magnitude are
    safe; the result equals the two-pass softmax up to rounding.
    """
    x = np.moveaxis(np.asarray(x), axis, -1)
    n = x.shape[-1]
    m = np.full(x.shape[:-1], -np.inf, dtype=x.dtype)
    s = np.zeros(x.shape[:-1], dtype=x.dtype)
    for lo in range(0, n, block):
        xb = x[..., lo:lo + block]
        m_new = np.maximum(m, xb.max(-1))
        s = s * np.exp(m - m_new) + np.exp(xb - m_new[..., None]).sum(-1)
        m = m_new
    out = np.exp(x - m[..., None]) / s[..., None]
    return np.moveaxis(out, -1, axis)


def softmax(a, axis: int = -1, block: int = 256) -> Tensor:
    a = as_tensor(a)
    out = streaming_softmax_np(a.data, axis, block)

    def back(g):
        return (out * (g - (g * out).sum(axis, keepdims=True)),)

    return make_op(out, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis, keepdims=True)
    lse = m + np.log(np.exp(a.data - m).sum(axis, keepdims=True))
    out = a.data - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis, keepdims=True),)

    return make_op(out, (a,), back)


# -- convolution


def causal_conv1d(x, weight, bias=None) -> Tensor:
    """Depthwise causal convolution over the sequence axis.

    x: (B, L, E); weight: (E, K); bias: (E,).  Output position t sees inputs
    t-K+1 .. t, with zeros to the left of the sequence start.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        parents.append(bias)
    B, L, E = x.shape
    if weight.ndim != 2 or weight.shape[0] != E:
        raise ShapeMismatch(f"conv weight {weight.shape} for {E} channels")
    K = weight.shape[1]
    xp = np.concatenate([np.zeros((B, K - 1, E), dtype=x.dtype), x.data], axis=1)
    out = np.zeros_like(x.data)
    for k in range(K):
        out += xp[:, k:k + L] * weight.data[:, k]
    if bias is not None:
        out += bias.data

    def back(g):
        gx = gw = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for k in range(K):
                gp[:, k:k + L] += g * weight.data[:, k]
            gx = gp[:, K - 1:]
        if weight.requires_grad:
            gw = np.stack([np.einsum("ble,ble->e", g, xp[:, k:k + L]) for k in range(K)], axis=1)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum((0, 1)) if bias.requires_grad else None)
        return grads

    return make_op(out, parents, back)


# -- losses


def mse_loss(pred, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error, optionally averaged over masked rows only.

    ``mask`` broadcasts against the leading dims of ``pred``; the mean is
    taken over selected elements.  An empty selection gives 0.
    """
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    if mask is None:
        w = np.ones_like(diff)
    else:
        m = np.asarray(mask, dtype=pred.dtype)
        m = m.reshape(m.shape + (1,) * (diff.ndim - m.ndim))
        w = np.broadcast_to(m, diff.shape)
    n = w.sum()
    scale = 0.0 if n == 0 else 1.0 / n
    out = np.asarray((w * diff * diff).sum() * scale, dtype=pred.dtype)
    return make_op(out, (pred,), lambda g: (g * 2.0 * scale * w * diff,))


def cross_entropy(logits, target: np.ndarray, reduction: str = "mean",
                  weight: np.ndarray | None = None) -> Tensor:
    """-log softmax(logits)[target] over the last axis.

    ``reduction`` is "none" (per-row losses), "mean" or "sum".  With
    ``weight`` (one value per row) the mean is the plain average of
    weighted per-row losses, and rows with weight 0 drop out of the sum.
    """
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    if logits.shape[:-1] != target.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs target {target.shape}")
    C = logits.shape[-1]
    if target.size and (target.min() < 0 or target.max() >= C):
        from ..errors import ClassOutOfRange
        raise ClassOutOfRange(f"target outside [0, {C})")
    z = logits.data
    m = z.max(-1, keepdims=True)
    lse = (m + np.log(np.exp(z - m).sum(-1, keepdims=True)))[..., 0]
    picked = np.take_along_axis(z, target[..., None], -1)[..., 0]
    per = lse - picked
    w = np.ones_like(per) if weight is None else np.asarray(weight, dtype=z.dtype)
    if reduction == "none":
        out, scale = per * w, None
    elif reduction == "sum":
        out, scale = np.asarray((per * w).sum(), dtype=z.dtype), 1.0
    elif reduction == "mean":
        scale = 1.0 / per.size if per.size else 0.0
        out = np.asarray((per * w).sum() * scale, dtype=z.dtype)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def back(g):
        p = np.exp(z - lse[..., None])
        np.put_along_axis(p, target[..., None], np.take_along_axis(p, target[..., None], -1) - 1, -1)
        coef = (g * w) if scale is None else (g * scale * w)
        return (p * coef[..., None],)

    return make_op(out, (logits,), back)
