"""Exact multi-head attention evaluated in key blocks with an online softmax.

The forward pass never materializes the full L x L score matrix: for each
block of keys it rescales the running output by exp(old_max - new_max) and
keeps a running normalizer.  Only the output and the per-query
log-sum-exp are saved; the backward pass recomputes block scores from
them.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from ..tensor.core import Tensor, as_tensor, make_op


def naive_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Reference softmax(q k^T * scale) v with the full score matrix."""
    scale = 1.0 / np.sqrt(q.shape[-1]) if scale is None else scale
    s = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    s = s - s.max(-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(-1, keepdims=True)
    return np.matmul(p, v)


def attention_probs(q: np.ndarray, k: np.ndarray, scale: float | None = None) -> np.ndarray:
    scale = 1.0 / np.sqrt(q.shape[-1]) if scale is None else scale
    s = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    p = np.exp(s - s.max(-1, keepdims=True))
    return p / p.sum(-1, keepdims=True)


def streaming_attention_np(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float,
                           block: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Blocked forward; returns (output, log-sum-exp per query)."""
    L = k.shape[-2]
    m = np.full(q.shape[:-1], -np.inf, dtype=q.dtype)
    s_run = np.zeros(q.shape[:-1], dtype=q.dtype)
    o = np.zeros(q.shape[:-1] + (v.shape[-1],), dtype=np.result_type(q, v))
    for lo in range(0, L, block):
        kb, vb = k[..., lo:lo + block, :], v[..., lo:lo + block, :]
        sc = np.matmul(q, np.swapaxes(kb, -1, -2)) * scale
        m_new = np.maximum(m, sc.max(-1))
        alpha = np.exp(m - m_new)
        p = np.exp(sc - m_new[..., None])
        s_run = s_run * alpha + p.sum(-1)
        o = o * alpha[..., None] + np.matmul(p, vb)
        m = m_new
    o /= s_run[..., None]
    return o, m + np.log(s_run)


def streaming_attention(q, k, v, scale: float | None = None, block: int = 128) -> Tensor:
    """Differentiable exact attention over (..., L, d) query/key/value tensors."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeMismatch(f"attention q {q.shape}, k {k.shape}, v {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1]) if scale is None else scale
    out, lse = streaming_attention_np(q.data, k.data, v.data, scale, block)

    def back(g):
        L = k.shape[-2]
        dq = np.zeros_like(q.data)
        dk = np.zeros_like(k.data)
        dv = np.zeros_like(v.data)
        rowdot = (g * out).sum(-1, keepdims=True)
        for lo in range(0, L, block):
            kb, vb = k.data[..., lo:lo + block, :], v.data[..., lo:lo + block, :]
            p = np.exp(np.matmul(q.data, np.swapaxes(kb, -1, -2)) * scale - lse[..., None])
            dv[..., lo:lo + block, :] = np.matmul(np.swapaxes(p, -1, -2), g)
            dp = np.matmul(g, np.swapaxes(vb, -1, -2))
            ds = p * (dp - rowdot) * scale
            dq += np.matmul(ds, kb)
            dk[..., lo:lo + block, :] = np.matmul(np.swapaxes(ds, -1, -2), q.data)
        return dq, dk, dv

    return make_op(out, (q, k, v), back)
