"""Supervised fine-tuning with CE or class-balanced margin losses, and OOD scoring.

The long-tail loss multiplies a class-balanced weight (1 - beta) / (1 - beta^n_y)
with a margin loss that subtracts C / n_y^(1/4) from the true-class logit
before the softmax.  Both depend only on the training-split class
histogram.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import FinetuneConfig, LdaConfig, RunConfig, seed_everything
from .errors import EmptySplit, LabelOutOfRange, ShapeMismatch
from .flow_repr import FlowSample, stack_samples
from .metrics import classification_metrics
from .model import ModelConfig, NetMamba
from .model.net import ClassifierHead
from .tensor import AdamW, Tensor, linear_warmup_decay, load_checkpoint, no_grad, ops, save_checkpoint
from .tensor.core import as_tensor

log = logging.getLogger(__name__)


def mlp_head(head: ClassifierHead, encoded) -> Tensor:
    """Logits from the trailing (class) token of an encoded (B, L, D) sequence."""
    encoded = as_tensor(encoded)
    if encoded.ndim != 3 or encoded.shape[-1] != head.fc1.weight.shape[0]:
        raise ShapeMismatch(f"encoded tokens {encoded.shape} do not fit head width {head.fc1.weight.shape[0]}")
    return head(encoded[:, -1])


def _rows(z, y):
    z = as_tensor(z)
    y = np.asarray(y, dtype=np.int64)
    if z.ndim == 1:
        z = ops.reshape(z, (1, z.shape[0]))
        y = y.reshape(1)
    return z, y


def ce_loss(z, y) -> Tensor:
    """Mean of -log softmax(z)[y]; a single logit vector gives the per-sample value."""
    z, y = _rows(z, y)
    return ops.cross_entropy(z, y)


def cb_weight(n_y, beta: float):
    """Class-balanced factor (1 - beta) / (1 - beta^n_y)."""
    n_y = np.asarray(n_y, dtype=np.float64)
    if beta == 0:
        return np.ones_like(n_y) if n_y.ndim else 1.0
    return (1.0 - beta) / (1.0 - np.power(beta, n_y))


def class_histogram(labels: Sequence[int], n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    return np.bincount(labels, minlength=n_classes)


def ldam_margins(hist, margin_c: float) -> np.ndarray:
    hist = np.asarray(hist, dtype=np.float64)
    return margin_c / np.power(np.maximum(hist, 1.0), 0.25)


def default_margin_c(hist, max_margin: float = 0.5) -> float:
    """Scale C so the rarest present class gets margin ``max_margin``."""
    hist = np.asarray(hist)
    return float(max_margin * np.power(hist[hist > 0].min(), 0.25))


def ldam_loss(z, y, hist, margin_c: float) -> Tensor:
    z, y = _rows(z, y)
    shift = np.zeros(z.shape, dtype=z.dtype)
    np.put_along_axis(shift, y[:, None], ldam_margins(hist, margin_c)[y][:, None].astype(z.dtype), axis=1)
    return ops.cross_entropy(z - shift, y)


def lda_loss(z, y, hist, beta: float, margin_c: float) -> Tensor:
    """Mean over rows of cb_weight(n_y) * margin loss."""
    z, y = _rows(z, y)
    hist = np.asarray(hist)
    shift = np.zeros(z.shape, dtype=z.dtype)
    np.put_along_axis(shift, y[:, None], ldam_margins(hist, margin_c)[y][:, None].astype(z.dtype), axis=1)
    w = np.asarray(cb_weight(hist[y], beta), dtype=z.dtype)
    return ops.cross_entropy(z - shift, y, weight=w)


def ood_score(z, tau: float = 1.0) -> np.ndarray | float:
    """Negative entropy sum p log p of softmax(z / tau); higher means more confident."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64) / tau
    m = z.max(-1, keepdims=True)
    logp = z - m - np.log(np.exp(z - m).sum(-1, keepdims=True))
    s = (np.exp(logp) * logp).sum(-1)
    return float(s) if s.ndim == 0 else s


def ood_decide(score, s: float):
    """0 (in-distribution) when score >= s, else 1 (out-of-distribution)."""
    out = (np.asarray(score) < s).astype(np.int64)
    return int(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# training


def predict_logits(model: NetMamba, samples: Sequence[FlowSample] | Mapping[str, np.ndarray],
                   batch_size: int = 64) -> np.ndarray:
    data = samples if isinstance(samples, Mapping) else stack_samples(samples)
    n = len(data["strides"])
    out = []
    with no_grad():
        for lo in range(0, n, batch_size):
            out.append(model.logits({k: v[lo:lo + batch_size] for k, v in data.items()}).data)
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def load_backbone(model: NetMamba, init) -> list[str]:
    """Copy embedding/encoder weights from a checkpoint path or state dict."""
    state = load_checkpoint(init)[0] if isinstance(init, (str, Path)) else dict(init)
    backbone = {k: v for k, v in state.items() if k.startswith(("embed.", "encoder."))}
    want = set(model.backbone_state())
    missing = sorted(want - set(backbone))
    if missing:
        raise KeyError(f"pre-trained state lacks backbone tensors: {missing[:5]}")
    return model.load_state_dict(backbone, strict=False)


@dataclass
class FinetuneResult:
    model: NetMamba
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = -1.0
    test_metrics: dict | None = None
    hist: np.ndarray | None = None
    margin_c: float = 0.0


def finetune_loop(train: Sequence[FlowSample], val: Sequence[FlowSample], model_cfg: ModelConfig,
                  ft_cfg: FinetuneConfig, lda_cfg: LdaConfig | None = None, init=None, seed: int = 0,
                  test: Sequence[FlowSample] | None = None, n_classes: int | None = None,
                  out: str | Path | None = None, run_config: RunConfig | None = None) -> FinetuneResult:
    """Train the classifier; keep the weights with the best validation accuracy.

    ``init`` is a pre-training checkpoint (path or state dict) whose
    embedding and encoder are loaded; the head starts fresh.  With
    ``test`` given, the retained model is evaluated on it.
    """
    if not train:
        raise EmptySplit("training split is empty")
    if not val:
        raise EmptySplit("validation split is empty")
    lda_cfg = lda_cfg or LdaConfig()
    tr = stack_samples(train)
    va = stack_samples(val)
    n_classes = n_classes or int(max(tr["labels"].max(), va["labels"].max())) + 1
    for part in (tr, va):
        if part["labels"].min() < 0 or part["labels"].max() >= n_classes:
            raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    hist = class_histogram(tr["labels"], n_classes)
    margin_c = lda_cfg.margin_c if lda_cfg.margin_c is not None else default_margin_c(hist, lda_cfg.max_margin)

    streams = seed_everything(seed)
    model = NetMamba(model_cfg, streams.init, n_classes=n_classes, with_decoder=False)
    if init is not None:
        load_backbone(model, init)
    opt = AdamW(model.parameters(), lr=ft_cfg.lr, betas=tuple(ft_cfg.betas), weight_decay=ft_cfg.weight_decay)
    order_rng = streams.train
    n = len(train)
    bs = min(ft_cfg.batch_size, n)
    steps_per_epoch = max(1, n // bs)
    total = ft_cfg.epochs * steps_per_epoch
    warmup = ft_cfg.warmup_epochs * steps_per_epoch
    res = FinetuneResult(model, hist=hist, margin_c=margin_c)
    best_state = None
    step = 0
    for epoch in range(ft_cfg.epochs):
        order = order_rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            batch = {k: v[idx] for k, v in tr.items()}
            z = model.logits(batch)
            if ft_cfg.loss == "lda":
                loss = lda_loss(z, batch["labels"], hist, lda_cfg.beta, margin_c)
            else:
                loss = ce_loss(z, batch["labels"])
            loss.backward()
            opt.step(lr=linear_warmup_decay(step, total, ft_cfg.lr, warmup))
            losses.append(float(loss.item()))
            step += 1
        val_pred = predict_logits(model, va).argmax(-1)
        val_acc = float(np.mean(val_pred == va["labels"]))
        res.history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_acc": val_acc})
        log.info("finetune epoch %d loss %.4f val_acc %.4f", epoch, np.mean(losses), val_acc)
        if val_acc > res.best_val_acc:
            res.best_val_acc, res.best_epoch = val_acc, epoch
            best_state = model.state_dict()
        if ft_cfg.target_val_acc is not None and val_acc >= ft_cfg.target_val_acc:
            break
    model.load_state_dict(best_state)
    if test:
        te = stack_samples(test)
        pred = predict_logits(model, te).argmax(-1)
        res.test_metrics = classification_metrics(te["labels"], pred, labels=list(range(n_classes)))
    if out is not None:
        meta = {"kind": "finetune", "seed": seed, "model": model_cfg.to_dict(), "n_classes": n_classes,
                "loss": ft_cfg.loss, "margin_c": margin_c, "beta": lda_cfg.beta, "hist": hist.tolist(),
                "best_epoch": res.best_epoch, "best_val_acc": res.best_val_acc, "history": res.history,
                "test_metrics": res.test_metrics, "config": run_config.to_dict() if run_config else None}
        save_checkpoint(out, model.state_dict(), meta)
    return res


def load_classifier(path: str | Path) -> tuple[NetMamba, dict]:
    """Rebuild a fine-tuned model from its checkpoint directory."""
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "finetune":
        raise ValueError(f"{path} is not a fine-tuned checkpoint")
    cfg = ModelConfig(**meta["model"])
    model = NetMamba(cfg, 0, n_classes=int(meta["n_classes"]), with_decoder=False)
    dtype = next(iter(arrays.values())).dtype
    model.astype(dtype)
    model.load_state_dict(arrays)
    return model, meta
