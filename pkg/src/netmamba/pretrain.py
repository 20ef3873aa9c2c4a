"""Masked-autoencoder pre-training.

Stride tokens are shuffled per sample and only the first few are shown to
the encoder (the class token and, in the multimodal model, the size and
interval tokens always stay visible).  The decoder sees the encoder output
scattered back to original positions with a shared mask token filling the
gaps, and reconstructs the raw normalized bytes of the hidden strides.
Size/interval sequences are corrupted by zeroing a fraction of positions;
the decoder classifies the true size and regresses the true interval
there.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import PretrainConfig, RunConfig, seed_everything
from .errors import EmptyDataset, PlanMismatch, RatioOutOfRange
from .flow_repr import FlowSample, stack_samples
from .model import ModelConfig, NetMamba
from .tensor import AdamW, Tensor, linear_warmup_decay, ops, save_checkpoint
from .tensor.core import as_tensor

log = logging.getLogger(__name__)


@dataclass
class MaskPlan:
    """Per-sample shuffle of the maskable (stride) tokens.

    ``permutation[b]`` lists stride indices in shuffled order; the first
    ``n_visible - 1`` of them are shown, the class token makes ``n_visible``.
    """

    permutation: np.ndarray  # (B, n_stride) int64
    n_visible: int
    seed: int | None = None

    @property
    def n_stride(self) -> int:
        return self.permutation.shape[1]

    @property
    def n_keep(self) -> int:
        return self.n_visible - 1

    @property
    def keep(self) -> np.ndarray:
        return self.permutation[:, : self.n_keep]

    @property
    def restore(self) -> np.ndarray:
        return np.argsort(self.permutation, axis=1, kind="stable")

    @property
    def masked(self) -> np.ndarray:
        """(B, n_stride) bool, True where the stride is hidden from the encoder."""
        m = np.ones(self.permutation.shape, dtype=bool)
        np.put_along_axis(m, self.keep, False, axis=1)
        return m


def n_visible_for(n_stride: int, ratio: float) -> int:
    if not 0 <= ratio < 1:
        raise RatioOutOfRange(f"mask ratio must lie in [0, 1), got {ratio}")
    return int(round((1 - ratio) * n_stride)) + 1


def make_mask_plan(batch: int, n_stride: int, ratio: float, seed: int | np.random.Generator) -> MaskPlan:
    n_vis = n_visible_for(n_stride, ratio)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = np.argsort(rng.random((batch, n_stride)), axis=1, kind="stable")
    return MaskPlan(perm, n_vis, None if isinstance(seed, np.random.Generator) else int(seed))


def shuffle_tokens(x, permutation: np.ndarray) -> Tensor:
    return ops.gather_rows(x, permutation)


def unshuffle_tokens(x, permutation: np.ndarray) -> Tensor:
    return ops.gather_rows(x, np.argsort(permutation, axis=1, kind="stable"))


def mask_strides(X0, ratio: float, seed: int | np.random.Generator, n_stride: int | None = None
                 ) -> tuple[Tensor, MaskPlan]:
    """Keep a random subset of the first ``n_stride`` tokens; the rest of the sequence stays.

    Returns ``[Shuffle(strides)[:n_keep]; trailing tokens]`` so the class
    token remains the last row.
    """
    X0 = as_tensor(X0)
    n_stride = X0.shape[1] - 1 if n_stride is None else n_stride
    plan = make_mask_plan(X0.shape[0], n_stride, ratio, seed)
    vis = shuffle_tokens(X0[:, :n_stride], plan.permutation)[:, : plan.n_keep]
    return ops.concat([vis, X0[:, n_stride:]], axis=1), plan


def decode_assemble(enc_out, plan: MaskPlan, mask_token, pe_dec) -> Tensor:
    """Scatter projected encoder rows back into a full-length decoder input."""
    enc_out, mask_token, pe_dec = as_tensor(enc_out), as_tensor(mask_token), as_tensor(pe_dec)
    B, n_rows, d = enc_out.shape
    n_tail = pe_dec.shape[0] - plan.n_stride
    if n_rows != plan.n_keep + n_tail or plan.permutation.shape[0] != B:
        raise PlanMismatch(f"encoder output {enc_out.shape} does not fit plan with {plan.n_keep} kept strides "
                           f"and {n_tail} trailing tokens")
    n_mask = plan.n_stride - plan.n_keep
    fill = ops.broadcast_to(ops.reshape(mask_token, (1, 1, d)), (B, n_mask, d))
    strides = unshuffle_tokens(ops.concat([enc_out[:, : plan.n_keep], fill], axis=1), plan.permutation)
    return ops.concat([strides, enc_out[:, plan.n_keep:]], axis=1) + pe_dec


def zero_mask_sequence(tokens: np.ndarray, ratio: float, seed: int | np.random.Generator
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Zero round(ratio * m) random positions per row; returns (corrupted copy, zeroed mask)."""
    if not 0 <= ratio < 1:
        raise RatioOutOfRange(f"sequence mask ratio must lie in [0, 1), got {ratio}")
    tokens = np.asarray(tokens)
    B, m = tokens.shape
    k = int(round(ratio * m))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = np.argsort(rng.random((B, m)), axis=1, kind="stable")
    zeroed = np.zeros((B, m), dtype=bool)
    np.put_along_axis(zeroed, order[:, :k], True, axis=1)
    out = tokens.copy()
    out[zeroed] = 0
    return out, zeroed


def stride_recon_loss(pred, masked: np.ndarray, raw_strides: np.ndarray) -> Tensor:
    """MSE between predicted and true bytes/255, over masked strides only."""
    target = np.asarray(raw_strides, dtype=np.float64) / 255.0
    return ops.mse_loss(pred, target, mask=masked)


def size_recon_loss(logits, zeroed: np.ndarray, sizes: np.ndarray) -> Tensor:
    """Cross-entropy over size classes 0..mtu, averaged over zeroed positions."""
    n = int(np.count_nonzero(zeroed))
    total = ops.cross_entropy(logits, np.asarray(sizes), reduction="sum", weight=zeroed)
    return total * (1.0 / n) if n else total * 0.0


def interval_recon_loss(pred, zeroed: np.ndarray, intervals: np.ndarray) -> Tensor:
    pred = as_tensor(pred)
    if pred.ndim == 3:
        pred = ops.reshape(pred, pred.shape[:2])
    return ops.mse_loss(pred, np.asarray(intervals), mask=zeroed)


def total_pretrain_loss(stride: Tensor, size: Tensor | None = None, interval: Tensor | None = None) -> Tensor:
    total = stride
    for term in (size, interval):
        if term is not None:
            total = total + term
    return total


def pretrain_losses(model: NetMamba, batch: Mapping[str, np.ndarray], rng: np.random.Generator
                    ) -> dict[str, Tensor]:
    """One masked forward pass; returns the loss terms and their sum."""
    cfg = model.cfg
    if model.decoder is None:
        raise ValueError("pre-training needs a model built with a decoder")
    strides = batch["strides"]
    if cfg.multimodal:
        sizes, z_size = zero_mask_sequence(batch["sizes"], cfg.mask_ratio_seq, rng)
        ints, z_int = zero_mask_sequence(batch["intervals"], cfg.mask_ratio_seq, rng)
        X0 = model.embed(strides, sizes, ints)
    else:
        X0 = model.embed(strides)
    vis, plan = mask_strides(X0, cfg.mask_ratio_stride, rng, n_stride=cfg.n_stride)
    enc = model.encoder(vis)
    dec = model.decoder
    h = dec(decode_assemble(dec.proj(enc), plan, dec.mask_token, dec.pos_embed))
    out = {"stride": stride_recon_loss(dec.stride_head(h[:, : cfg.n_stride]), plan.masked, strides)}
    if cfg.multimodal:
        lo, mid = cfg.n_stride, cfg.n_stride + cfg.m_seq
        out["size"] = size_recon_loss(dec.size_head(h[:, lo:mid]), z_size, batch["sizes"])
        out["interval"] = interval_recon_loss(dec.interval_head(h[:, mid:mid + cfg.m_seq]), z_int,
                                              batch["intervals"])
    out["total"] = total_pretrain_loss(out["stride"], out.get("size"), out.get("interval"))
    return out


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled each pass over the data."""
    while True:
        order = rng.permutation(n)
        for lo in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[lo:lo + batch_size]


@dataclass
class PretrainResult:
    model: NetMamba
    history: list[dict[str, float]]


def pretrain_loop(samples: Sequence[FlowSample], model_cfg: ModelConfig, train_cfg: PretrainConfig,
                  seed: int = 0, out: str | Path | None = None, run_config: RunConfig | None = None
                  ) -> PretrainResult:
    """Train encoder and decoder on masked reconstruction for ``train_cfg.steps`` steps.

    With ``out`` set, writes a checkpoint directory there and the per-step
    loss curve to ``out/loss.csv``.
    """
    if not samples:
        raise EmptyDataset("no flow samples to pre-train on")
    streams = seed_everything(seed)
    data = stack_samples(samples)
    model = NetMamba(model_cfg, streams.init, n_classes=0, with_decoder=True)
    opt = AdamW(model.parameters(), lr=train_cfg.lr, betas=tuple(train_cfg.betas),
                weight_decay=train_cfg.weight_decay)
    mask_rng, order_rng = streams.mask, streams.train
    history = []
    it = batches(len(samples), train_cfg.batch_size, order_rng)
    for step in range(train_cfg.steps):
        idx = next(it)
        batch = {k: v[idx] for k, v in data.items()}
        losses = pretrain_losses(model, batch, mask_rng)
        losses["total"].backward()
        lr = linear_warmup_decay(step, train_cfg.steps, train_cfg.lr, train_cfg.warmup_steps)
        opt.step(lr=lr)
        row = {"step": step, "lr": lr, **{k: float(v.item()) for k, v in losses.items()}}
        history.append(row)
        if step % 50 == 0:
            log.info("pretrain step %d loss %.5f", step, row["total"])
    if out is not None:
        write_pretrain_outputs(out, model, history, seed, run_config)
    return PretrainResult(model, history)


def write_pretrain_outputs(out: str | Path, model: NetMamba, history: list[dict], seed: int,
                           run_config: RunConfig | None = None) -> None:
    out = Path(out)
    meta = {"kind": "pretrain", "seed": seed, "model": model.cfg.to_dict(),
            "config": run_config.to_dict() if run_config else None, "steps": len(history)}
    save_checkpoint(out, model.state_dict(), meta)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(history[0]) if history else ["step"])
        w.writeheader()
        w.writerows(history)
