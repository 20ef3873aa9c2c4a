"""Encoder/decoder assembly and the classification head."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..tensor import LayerNorm, Linear, Module, Parameter, RMSNorm, Tensor, default_dtype, ops
from .blocks import make_blocks
from .config import ModelConfig
from .embed import Embedding


def _normal(rng, shape, std=0.02):
    return (rng.standard_normal(shape) * std).astype(default_dtype())


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = make_blocks(cfg.block_kind, cfg.n_enc_blocks, cfg.d_enc, cfg.e_enc, cfg.n_state, rng,
                                  cfg.n_heads, cfg.conv_width, cfg.dt_rank, cfg.scan == "parallel",
                                  cfg.attn_block)

    def __call__(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


class Decoder(Module):
    """Light decoder used only during pre-training.

    Holds the projection from encoder width, the learned mask token, its own
    positional embedding and the reconstruction heads.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d_dec
        self.proj = Linear(cfg.d_enc, d, rng)
        self.mask_token = Parameter(_normal(rng, (d,)))
        self.pos_embed = Parameter(_normal(rng, (cfg.seq_len, d)))
        self.blocks = make_blocks(cfg.block_kind, cfg.n_dec_blocks, d, cfg.e_dec, cfg.n_state, rng,
                                  cfg.n_heads, cfg.conv_width, cfg.dt_rank, cfg.scan == "parallel",
                                  cfg.attn_block)
        self.norm = RMSNorm(d) if cfg.block_kind == "mamba" else LayerNorm(d)
        self.stride_head = Linear(d, cfg.L_s, rng)
        if cfg.multimodal:
            self.size_head = Linear(d, cfg.mtu + 1, rng)
            self.interval_head = Linear(d, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        """Run blocks on a full-length (B, L, d_dec) sequence, PE already added."""
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class ClassifierHead(Module):
    """LayerNorm then a two-layer GELU MLP on the class-token representation."""

    def __init__(self, d: int, n_classes: int, rng: np.random.Generator):
        self.norm = LayerNorm(d)
        self.fc1 = Linear(d, d, rng)
        self.fc2 = Linear(d, n_classes, rng)

    def __call__(self, z: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(self.norm(z))))


class NetMamba(Module):
    """Backbone (embedding + encoder) with optional decoder and classifier head.

    Parameter names are prefixed ``embed.``, ``encoder.``, ``decoder.`` and
    ``head.``, so a pre-trained backbone can be moved into a fine-tuning
    model by name.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0, n_classes: int = 0,
                 with_decoder: bool = True):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.n_classes = n_classes
        self.embed = Embedding(cfg.n_stride, cfg.L_s, cfg.d_enc, rng, cfg.multimodal, cfg.m_seq)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng) if with_decoder else None
        self.head = ClassifierHead(cfg.d_enc, n_classes, rng) if n_classes else None

    def tokens(self, batch: Mapping[str, np.ndarray]) -> Tensor:
        if self.cfg.multimodal:
            return self.embed(batch["strides"], batch["sizes"], batch["intervals"])
        return self.embed(batch["strides"])

    def features(self, batch: Mapping[str, np.ndarray]) -> Tensor:
        """Class-token representation (B, d_enc) after the encoder."""
        return self.encoder(self.tokens(batch))[:, -1]

    def logits(self, batch: Mapping[str, np.ndarray]) -> Tensor:
        if self.head is None:
            raise RuntimeError("model was built without a classifier head (n_classes=0)")
        return self.head(self.features(batch))

    def backbone_state(self) -> dict[str, np.ndarray]:
        return {n: a for n, a in self.state_dict().items() if n.startswith(("embed.", "encoder."))}
