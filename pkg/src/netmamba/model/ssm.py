"""Discretized selective state-space recurrence.

Shapes follow the block: ``abar, bbar`` are (B, L, E, N), ``c`` is (B, L, N)
and ``x`` is (B, L, E).  The recurrence is

    h_t = abar_t * h_{t-1} + bbar_t * x_t,    h_0 = 0
    y_t = sum_n c_t[n] * h_t[:, n]

Two evaluators are provided: a plain loop over time and a work-efficient
(Blelloch) prefix scan over the associative operator on pairs

    (a1, b1) then (a2, b2)  ->  (a2 * a1, a2 * b1 + b2)

which needs O(L) combines in O(log L) vectorized levels.  Training uses the
parallel form in both directions: the adjoint of the state obeys the same
recurrence run backwards in time.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from ..tensor import ops
from ..tensor.core import Tensor, as_tensor, make_op


def discretize(delta, A, B_mat) -> tuple[Tensor, Tensor]:
    """Zero-order-hold map: abar = exp(delta * A), bbar = delta * B.

    delta: (B, L, E) step sizes, A: (E, N), B_mat: (B, L, N).
    """
    delta, A, B_mat = as_tensor(delta), as_tensor(A), as_tensor(B_mat)
    if delta.ndim != 3 or A.ndim != 2 or delta.shape[-1] != A.shape[0] or B_mat.shape[:2] != delta.shape[:2]:
        raise ShapeMismatch(f"discretize delta {delta.shape}, A {A.shape}, B {B_mat.shape}")
    Bsz, L, E = delta.shape
    N = A.shape[1]
    d4 = ops.reshape(delta, (Bsz, L, E, 1))
    abar = ops.exp(d4 * A)
    bbar = d4 * ops.reshape(B_mat, (Bsz, L, 1, N))
    return abar, bbar


def linear_recurrence_sequential(a: np.ndarray, b: np.ndarray, axis: int = 1) -> np.ndarray:
    """h_t = a_t * h_{t-1} + b_t along ``axis`` with h_{-1} = 0, by a loop."""
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    h = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    prev = np.zeros(h.shape[1:], dtype=h.dtype)
    for t in range(h.shape[0]):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return np.moveaxis(h, 0, axis)


def linear_recurrence_parallel(a: np.ndarray, b: np.ndarray, axis: int = 1) -> np.ndarray:
    """Same result as the sequential loop, by a Blelloch up-sweep/down-sweep scan."""
    a = np.moveaxis(np.asarray(a), axis, 0)
    b = np.moveaxis(np.asarray(b), axis, 0)
    shape = np.broadcast_shapes(a.shape, b.shape)
    a = np.broadcast_to(a, shape)
    b = np.broadcast_to(b, shape)
    L = shape[0]
    n = 1 << max(L - 1, 0).bit_length()
    dt = np.result_type(a, b)
    # identity element (1, 0) pads the tail up to a power of two
    pa = np.ones((n,) + shape[1:], dtype=dt)
    pb = np.zeros((n,) + shape[1:], dtype=dt)
    pa[:L] = a
    pb[:L] = b
    d = 1
    while d < n:
        left, right = slice(d - 1, n, 2 * d), slice(2 * d - 1, n, 2 * d)
        pb[right] += pa[right] * pb[left]
        pa[right] *= pa[left]
        d *= 2
    pa[n - 1] = 1
    pb[n - 1] = 0
    d = n // 2
    while d >= 1:
        left, right = slice(d - 1, n, 2 * d), slice(2 * d - 1, n, 2 * d)
        ta, tb = pa[left].copy(), pb[left].copy()
        pa[left] = pa[right]
        pb[left] = pb[right]
        # right child: parent prefix followed by the left subtree total
        pb[right] = ta * pb[right] + tb
        pa[right] *= ta
        d //= 2
    # pb now holds the exclusive prefix state h_{t-1}
    h = a * pb[:L] + b
    return np.moveaxis(h, 0, axis)


def _check(abar, bbar, c, x):
    if abar.shape != bbar.shape or abar.ndim != 4:
        raise ShapeMismatch(f"abar {abar.shape} vs bbar {bbar.shape}")
    Bsz, L, E, N = abar.shape
    if c.shape != (Bsz, L, N) or x.shape != (Bsz, L, E):
        raise ShapeMismatch(f"c {c.shape} / x {x.shape} do not match abar {abar.shape}")


def _readout(h: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.matmul(h, c[..., None])[..., 0]


def selective_scan_sequential(abar, bbar, c, x) -> np.ndarray:
    abar, bbar, c, x = (np.asarray(v) for v in (abar, bbar, c, x))
    _check(abar, bbar, c, x)
    Bsz, L, E, N = abar.shape
    y = np.empty((Bsz, L, E), dtype=np.result_type(abar, bbar, c, x))
    h = np.zeros((Bsz, E, N), dtype=y.dtype)
    for t in range(L):
        h = abar[:, t] * h + bbar[:, t] * x[:, t, :, None]
        y[:, t] = _readout(h, c[:, t])
    return y


def selective_scan_parallel(abar, bbar, c, x) -> np.ndarray:
    abar, bbar, c, x = (np.asarray(v) for v in (abar, bbar, c, x))
    _check(abar, bbar, c, x)
    h = linear_recurrence_parallel(abar, bbar * x[..., None], axis=1)
    return _readout(h, c)


def selective_scan(abar, bbar, c, x, parallel: bool = True) -> Tensor:
    """Differentiable scan; returns y of shape (B, L, E)."""
    abar, bbar, c, x = (as_tensor(v) for v in (abar, bbar, c, x))
    _check(abar.data, bbar.data, c.data, x.data)
    scan = linear_recurrence_parallel if parallel else linear_recurrence_sequential
    u = bbar.data * x.data[..., None]
    h = scan(abar.data, u, axis=1)
    y = _readout(h, c.data)

    def back(g):
        # dL/dh_t = c_t g_t + abar_{t+1} dL/dh_{t+1}: the same recurrence, reversed in time
        src = g[..., None] * c.data[:, :, None, :]
        a_next = np.concatenate([abar.data[:, 1:], np.ones_like(abar.data[:, :1])], axis=1)
        dh = scan(a_next[:, ::-1], src[:, ::-1], axis=1)[:, ::-1]
        h_prev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)
        ga = dh * h_prev if abar.requires_grad else None
        gb = dh * x.data[..., None] if bbar.requires_grad else None
        gc = np.matmul(g[:, :, None, :], h)[:, :, 0, :] if c.requires_grad else None
        gx = (dh * bbar.data).sum(-1) if x.requires_grad else None
        return ga, gb, gc, gx

    return make_op(y, (abar, bbar, c, x), back)


def selective_ssm(delta, A, B_mat, c, x, parallel: bool = True) -> Tensor:
    """Discretization fused with the scan: one node instead of several.

    Equivalent to ``selective_scan(*discretize(delta, A, B_mat), c, x)``
    but never keeps gradients of the (B, L, E, N) intermediates around.
    """
    delta, A, B_mat, c, x = (as_tensor(v) for v in (delta, A, B_mat, c, x))
    if delta.ndim != 3 or A.ndim != 2 or delta.shape[-1] != A.shape[0] or B_mat.shape[:2] != delta.shape[:2]:
        raise ShapeMismatch(f"selective_ssm delta {delta.shape}, A {A.shape}, B {B_mat.shape}")
    d4 = delta.data[..., None]
    abar = np.exp(d4 * A.data)
    bbar = d4 * B_mat.data[:, :, None, :]
    _check(abar, bbar, c.data, x.data)
    scan = linear_recurrence_parallel if parallel else linear_recurrence_sequential
    h = scan(abar, bbar * x.data[..., None], axis=1)
    y = _readout(h, c.data)

    def back(g):
        src = g[..., None] * c.data[:, :, None, :]
        a_next = np.concatenate([abar[:, 1:], np.ones_like(abar[:, :1])], axis=1)
        dh = scan(a_next[:, ::-1], src[:, ::-1], axis=1)[:, ::-1]
        gc = np.matmul(g[:, :, None, :], h)[:, :, 0, :]
        h[:, 1:] = h[:, :-1]
        h[:, :1] = 0
        ga_abar = dh * h * abar          # dL/dabar * abar
        gb = dh * x.data[..., None]      # dL/dbbar
        gx = (dh * bbar).sum(-1)
        gdelta = (ga_abar * A.data).sum(-1) + np.matmul(gb, B_mat.data[..., None])[..., 0]
        gA = (ga_abar * d4).sum((0, 1))
        gB = np.matmul(delta.data[:, :, None, :], gb)[:, :, 0, :]
        return gdelta, gA, gB, gc, gx

    return make_op(y, (delta, A, B_mat, c, x), back)
