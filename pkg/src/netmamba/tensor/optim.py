"""AdamW with decoupled weight decay and a linear warmup/decay schedule."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .core import Parameter


def adamw_step(params: Iterable[Parameter], lr: float, step: int, betas=(0.9, 0.999),
               weight_decay: float = 0.0, eps: float = 1e-8) -> None:
    """One in-place AdamW update; ``step`` counts from 1.

    Weight decay only touches parameters flagged ``decay`` (matrix weights).
    Adjoints are zeroed afterwards.
    """
    b1, b2 = betas
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for p in params:
        g = p.grad
        if weight_decay and p.decay:
            p.data *= 1.0 - lr * weight_decay
        p.moment1 *= b1
        p.moment1 += (1.0 - b1) * g
        p.moment2 *= b2
        p.moment2 += (1.0 - b2) * g * g
        update = (p.moment1 / c1) / (np.sqrt(p.moment2 / c2) + eps)
        p.data -= (lr * update).astype(p.data.dtype, copy=False)
        p.zero_grad()


class AdamW:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 weight_decay: float = 0.05, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        self.t += 1
        adamw_step(self.params, self.lr if lr is None else lr, self.t, self.betas,
                   self.weight_decay, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def linear_warmup_decay(step: int, total: int, base_lr: float, warmup: int) -> float:
    """Learning rate for 0-based ``step``: linear ramp up, then linear decay to 0."""
    if total <= 0:
        return base_lr
    if warmup > 0 and step < warmup:
        return base_lr * (step + 1) / warmup
    rest = max(total - warmup, 1)
    return base_lr * max(0.0, 1.0 - (step - warmup) / rest)
