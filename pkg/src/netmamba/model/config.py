from __future__ import annotations

import math
from dataclasses import asdict, dataclass

BLOCK_KINDS = ("mamba", "trans")


@dataclass
class ModelConfig:
    """Architecture hyper-parameters; defaults are the full-size model."""

    d_enc: int = 256
    d_dec: int = 128
    e_enc: int = 512
    e_dec: int = 256
    n_state: int = 16
    n_enc_blocks: int = 4
    n_dec_blocks: int = 2
    block_kind: str = "mamba"
    multimodal: bool = False
    n_heads: int = 8
    L_s: int = 4
    n_stride: int = 400
    m_seq: int = 20
    mask_ratio_stride: float = 0.9
    mask_ratio_seq: float = 0.15
    conv_width: int = 4
    dt_rank: int | None = None
    scan: str = "sequential"
    attn_block: int = 128
    mtu: int = 1500

    def __post_init__(self):
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError(f"block_kind must be one of {BLOCK_KINDS}, got {self.block_kind!r}")
        if self.e_enc != 2 * self.d_enc or self.e_dec != 2 * self.d_dec:
            raise ValueError("expansion width must be 2 * model width")
        if self.block_kind == "trans" and (self.d_enc % self.n_heads or self.d_dec % self.n_heads):
            raise ValueError(f"n_heads={self.n_heads} must divide d_enc and d_dec")
        if self.scan not in ("parallel", "sequential"):
            raise ValueError(f"scan must be 'parallel' or 'sequential', got {self.scan!r}")

    @property
    def seq_len(self) -> int:
        return self.n_stride + 1 + (2 * self.m_seq if self.multimodal else 0)

    def rank_for(self, d: int) -> int:
        return self.dt_rank or math.ceil(d / 16)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Small configuration used for desk-scale experiments and tests."""
        base = dict(d_enc=32, d_dec=16, e_enc=64, e_dec=32, n_state=8, n_enc_blocks=2,
                    n_dec_blocks=1, n_heads=2)
        base.update(overrides)
        if "d_enc" in overrides and "e_enc" not in overrides:
            base["e_enc"] = 2 * base["d_enc"]
        if "d_dec" in overrides and "e_dec" not in overrides:
            base["e_dec"] = 2 * base["d_dec"]
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)
