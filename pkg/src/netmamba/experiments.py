"""Desk-scale experiment drivers on synthetic traffic.

Each function runs one seeded trial and returns plain numbers, so the same
code backs the acceptance tests and the demo scripts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import FinetuneConfig, LdaConfig, PretrainConfig
from .finetune import finetune_loop, ood_score
from .flow_repr import ReprConfig
from .metrics import auroc, classification_metrics, fpr_at_95_tpr, split
from .model import ModelConfig
from .online import classify_samples
from .pretrain import pretrain_loop
from .synthetic import make_signatures, synthetic_samples

# a short representation (2 packets x 80 bytes = 40 strides) for the multi-seed studies
SMALL_REPR = ReprConfig(M_b=2, N_h=40, N_p=40)


def _window_mean(values: list[float], n: int = 10) -> tuple[float, float]:
    n = max(1, min(n, len(values) // 2 or 1))
    return float(np.mean(values[:n])), float(np.mean(values[-n:]))


@dataclass
class LearningTrial:
    block_kind: str
    multimodal: bool
    recon_first: float
    recon_last: float
    pretrain_seconds: float
    finetune_seconds: float
    epochs: int
    test_accuracy: float
    history: list = field(default_factory=list)

    @property
    def recon_reduction(self) -> float:
        return 1.0 - self.recon_last / self.recon_first


def learning_corpus(seed: int = 0, n_flows: int = 2000, n_classes: int = 3):
    """Class-distinct synthetic corpus split 8:1:1."""
    per = [n_flows // n_classes + (1 if c < n_flows % n_classes else 0) for c in range(n_classes)]
    return split(synthetic_samples(per, seed=seed), seed=seed)


def learning_trial(train, val, test, block_kind: str = "mamba", multimodal: bool = False, seed: int = 0,
                   pretrain_steps: int = 200, pretrain_batch: int = 16, epochs: int = 20,
                   finetune_batch: int = 32, target_val_acc: float | None = 0.99) -> LearningTrial:
    """Tiny pre-training on the training split, then fine-tuning from that checkpoint.

    The reconstruction drop compares the mean stride loss of the first and
    last 10 steps (single steps are noisy because masks are random).
    """
    cfg = ModelConfig.tiny(block_kind=block_kind, multimodal=multimodal)
    t0 = time.perf_counter()
    pre = pretrain_loop(train, cfg, PretrainConfig(steps=pretrain_steps, batch_size=pretrain_batch,
                                                   warmup_steps=10), seed=seed)
    t1 = time.perf_counter()
    first, last = _window_mean([h["stride"] for h in pre.history])
    ft = finetune_loop(train, val, cfg, FinetuneConfig(epochs=epochs, batch_size=finetune_batch,
                                                       target_val_acc=target_val_acc),
                       init=pre.model.state_dict(), seed=seed, test=test)
    t2 = time.perf_counter()
    return LearningTrial(block_kind, multimodal, first, last, t1 - t0, t2 - t1, len(ft.history),
                         ft.test_metrics["accuracy"], ft.history)


def long_tail_trial(seed: int, counts=(1000, 100, 10), test_per_class: int = 200, epochs: int = 15,
                    distinctness: float = 0.5, noise: float = 0.3, batch_size: int = 32,
                    lda: LdaConfig | None = None) -> dict:
    """CE and LDA fine-tuned on the same long-tailed split, scored on a balanced test set.

    Classes share layout, lengths and timing and differ only in half of
    their payload bytes, so the rare class is hard to learn from a few
    examples.  Returns per-class test recall for both losses.
    """
    sig = make_signatures(len(counts), seed=100 + seed, distinctness=distinctness, shared_layout=True)
    kw = dict(cfg=SMALL_REPR, signatures=sig, noise=noise, packets_per_flow=4)
    train, val, _ = split(synthetic_samples(list(counts), seed=seed, **kw), seed=seed)
    test = synthetic_samples([test_per_class] * len(counts), seed=1000 + seed, **kw)
    cfg = ModelConfig.tiny(n_stride=SMALL_REPR.n_stride)
    y = [s.label for s in test]
    out = {}
    for loss in ("ce", "lda"):
        ft = finetune_loop(train, val, cfg, FinetuneConfig(epochs=epochs, batch_size=batch_size, loss=loss),
                           lda or LdaConfig(), seed=seed, n_classes=len(counts))
        pred = classify_samples(ft.model, test).argmax(-1)
        out[loss] = classification_metrics(y, pred, list(range(len(counts))))["recall_per_class"]
    return out


def ood_trial(seed: int, n_per_class: int = 300, epochs: int = 5, tau: float = 1.0, noise: float = 0.1,
              batch_size: int = 32, distinctness: float = 1.0, shared_layout: bool = False,
              multimodal: bool = False) -> dict:
    """Train on classes 0 and 1, score held-out class-0/1 flows (ID) against class-2 flows (OOD)."""
    sig = make_signatures(3, seed=200 + seed, distinctness=distinctness, shared_layout=shared_layout)
    kw = dict(cfg=SMALL_REPR, signatures=sig, noise=noise, packets_per_flow=4)
    train, val, test = split(synthetic_samples([n_per_class, n_per_class], seed=seed, **kw), seed=seed)
    ood = synthetic_samples({2: len(test)}, seed=2000 + seed, **kw)
    cfg = ModelConfig.tiny(n_stride=SMALL_REPR.n_stride, multimodal=multimodal)
    ft = finetune_loop(train, val, cfg, FinetuneConfig(epochs=epochs, batch_size=batch_size), seed=seed,
                       n_classes=2)
    s_id = ood_score(classify_samples(ft.model, test), tau)
    s_ood = ood_score(classify_samples(ft.model, ood), tau)
    return {"auroc": auroc(s_id, s_ood), "fpr95": fpr_at_95_tpr(s_id, s_ood),
            "id_accuracy": float(np.mean(classify_samples(ft.model, test).argmax(-1) ==
                                         np.array([s.label for s in test])))}
