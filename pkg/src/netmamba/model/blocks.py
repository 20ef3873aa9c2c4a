"""Residual sequence blocks: the selective-SSM block and a Transformer baseline."""

from __future__ import annotations

import numpy as np

from ..tensor import LayerNorm, Linear, Module, Parameter, RMSNorm, Tensor, default_dtype, ops
from .attention import streaming_attention
from .ssm import selective_ssm


class MambaBlock(Module):
    """Unidirectional selective state-space block with pre-norm and residual.

    x, z = in-projections of RMSNorm(X); x goes through a causal depthwise
    conv and SiLU, then input-dependent B, C and step size drive the
    discretized scan; the output is gated by SiLU(z) and projected back.
    """

    def __init__(self, d: int, e: int, n: int, rng: np.random.Generator, conv_width: int = 4,
                 dt_rank: int | None = None, parallel_scan: bool = True,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        dt = default_dtype()
        r = dt_rank or int(np.ceil(d / 16))
        self.parallel_scan = parallel_scan
        self.norm = RMSNorm(d)
        self.in_x = Linear(d, e, rng, bias=False)
        self.in_z = Linear(d, e, rng, bias=False)
        bound = 1.0 / np.sqrt(conv_width)
        self.conv_weight = Parameter(rng.uniform(-bound, bound, (e, conv_width)).astype(dt), decay=True)
        self.conv_bias = Parameter(np.zeros(e, dtype=dt))
        self.proj_B = Linear(e, n, rng, bias=False)
        self.proj_C = Linear(e, n, rng, bias=False)
        self.dt_down = Linear(e, r, rng, bias=False)
        self.dt_up = Linear(r, e, rng, bias=False)
        # initial step sizes log-uniform in [dt_min, dt_max], stored through inverse softplus
        step = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), e))
        self.dt_bias = Parameter((step + np.log(-np.expm1(-step))).astype(dt))
        self.A_log = Parameter(np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (e, 1))).astype(dt))
        self.out_proj = Linear(e, d, rng, bias=False)

    def __call__(self, X: Tensor) -> Tensor:
        h = self.norm(X)
        x = self.in_x(h)
        z = self.in_z(h)
        xc = ops.silu(ops.causal_conv1d(x, self.conv_weight, self.conv_bias))
        B = self.proj_B(xc)
        C = self.proj_C(xc)
        delta = ops.softplus(self.dt_up(self.dt_down(xc)) + self.dt_bias)
        A = -ops.exp(self.A_log)
        y = selective_ssm(delta, A, B, C, xc, parallel=self.parallel_scan)
        return self.out_proj(y * ops.silu(z)) + X


class GeGLU(Module):
    """(GELU(u Wg) * (u Wv)) Wout with a 4x hidden width."""

    def __init__(self, d: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or 4 * d
        self.gate = Linear(d, hidden, rng)
        self.value = Linear(d, hidden, rng)
        self.out = Linear(hidden, d, rng)

    def __call__(self, u: Tensor) -> Tensor:
        return self.out(ops.gelu(self.gate(u)) * self.value(u))


class TransBlock(Module):
    """Bidirectional attention block.

    Residuals are taken around the normalized activations:
    X1 = LN(X), X3 = X1 + Attn(X1), X4 = LN(X3), out = X4 + FFN(X4).
    """

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, attn_block: int = 128):
        self.d, self.n_heads, self.attn_block = d, n_heads, attn_block
        self.norm1 = LayerNorm(d)
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = GeGLU(d, rng)

    def attend(self, x: Tensor) -> Tensor:
        B, L, d = x.shape
        H = self.n_heads

        def heads(t):
            return ops.transpose(ops.reshape(t, (B, L, H, d // H)), (0, 2, 1, 3))

        o = streaming_attention(heads(self.q(x)), heads(self.k(x)), heads(self.v(x)), block=self.attn_block)
        return self.o(ops.reshape(ops.transpose(o, (0, 2, 1, 3)), (B, L, d)))

    def __call__(self, X: Tensor) -> Tensor:
        x1 = self.norm1(X)
        x3 = x1 + self.attend(x1)
        x4 = self.norm2(x3)
        return x4 + self.ffn(x4)


def make_blocks(kind: str, n_blocks: int, d: int, e: int, n_state: int, rng: np.random.Generator,
                n_heads: int = 8, conv_width: int = 4, dt_rank: int | None = None,
                parallel_scan: bool = True, attn_block: int = 128) -> list[Module]:
    if kind == "mamba":
        return [MambaBlock(d, e, n_state, rng, conv_width, dt_rank, parallel_scan) for _ in range(n_blocks)]
    if kind == "trans":
        return [TransBlock(d, n_heads, rng, attn_block) for _ in range(n_blocks)]
    raise ValueError(f"unknown block kind {kind!r}")
