"""Stride embedding and multimodal early fusion."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from ..tensor import Module, Parameter, Tensor, default_dtype, ops
from ..tensor.core import as_tensor


def sinusoidal_encode(x, d: int) -> np.ndarray:
    """Fixed sin/cos features of scalar values; output shape x.shape + (d,).

    Entry 2j is sin(x / 10000^(2j/d)) and entry 2j+1 the matching cos.
    """
    x = np.asarray(x, dtype=np.float64)
    j = np.arange((d + 1) // 2)
    angles = x[..., None] / np.power(10000.0, 2 * j / d)
    out = np.empty(x.shape + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles[..., : d // 2])
    return out


def _normal(rng, shape, std=0.02):
    return (rng.standard_normal(shape) * std).astype(default_dtype())


class Embedding(Module):
    """Projects strides to tokens, optionally fuses size/interval tokens.

    Token layout: ``[strides; sizes; intervals; cls]`` for the multimodal
    model and ``[strides; cls]`` otherwise, with the class token last.
    """

    def __init__(self, n_stride: int, L_s: int, d: int, rng: np.random.Generator,
                 multimodal: bool = False, m_seq: int = 20):
        self.n_stride, self.L_s, self.d, self.m_seq = n_stride, L_s, d, m_seq
        self.multimodal = multimodal
        self.stride_proj = Parameter(rng.uniform(-1, 1, (L_s, d)).astype(default_dtype()) / np.sqrt(L_s), decay=True)
        self.cls_token = Parameter(_normal(rng, (d,)))
        n_tok = n_stride + 1 + (2 * m_seq if multimodal else 0)
        self.pos_embed = Parameter(_normal(rng, (n_tok, d)))
        if multimodal:
            self.segment = Parameter(_normal(rng, (3, d)))

    @property
    def n_tokens(self) -> int:
        return self.pos_embed.shape[0]

    def stride_tokens(self, strides) -> Tensor:
        """(B, n_stride, L_s) bytes -> (B, n_stride, d) projected strides, no PE."""
        if isinstance(strides, Tensor):
            s = strides
        else:
            s = as_tensor(np.asarray(strides, dtype=default_dtype()) / 255.0)
        if s.ndim != 3 or s.shape[1:] != (self.n_stride, self.L_s):
            raise ShapeMismatch(f"strides {s.shape}, expected (B, {self.n_stride}, {self.L_s})")
        return ops.matmul(s, self.stride_proj)

    def __call__(self, strides, sizes=None, intervals=None) -> Tensor:
        """Full token sequence X0 with positional embeddings added."""
        xs = self.stride_tokens(strides)
        B = xs.shape[0]
        cls = ops.broadcast_to(ops.reshape(self.cls_token, (1, 1, self.d)), (B, 1, self.d))
        if not self.multimodal:
            return ops.concat([xs, cls], axis=1) + self.pos_embed
        if sizes is None or intervals is None:
            raise ShapeMismatch("multimodal embedding needs size and interval sequences")
        sizes, intervals = np.asarray(sizes), np.asarray(intervals)
        if sizes.shape != (B, self.m_seq) or intervals.shape != (B, self.m_seq):
            raise ShapeMismatch(f"sequences {sizes.shape}/{intervals.shape}, expected ({B}, {self.m_seq})")
        dt = xs.dtype
        x_size = as_tensor(sinusoidal_encode(sizes, self.d).astype(dt))
        x_int = as_tensor(sinusoidal_encode(intervals, self.d).astype(dt))
        parts = [xs + self.segment[0], x_size + self.segment[1], x_int + self.segment[2], cls]
        return ops.concat(parts, axis=1) + self.pos_embed
