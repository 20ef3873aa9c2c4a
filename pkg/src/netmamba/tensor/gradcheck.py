"""Central finite-difference check of the reverse pass."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
               max_samples: int | None = 64, rng: np.random.Generator | None = None,
               floor: float = 1e-8) -> float:
    """Max relative error between backward() and central differences.

    ``fn`` must rebuild the scalar loss from the current values of
    ``inputs`` on every call.  At most ``max_samples`` elements per input
    are probed (all of them when None).  Run under 64-bit precision.

    The denominator floor is scale-aware: at least 1e-3 of the largest
    numeric gradient over all checked inputs, so elements whose true
    gradient is zero or tiny next to the rest (for instance a key bias,
    which softmax ignores) are not judged by finite-difference roundoff
    alone.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = np.zeros_like(t.data) if t.grad is None else t.grad * 0
    loss = fn()
    loss.backward()
    pairs = []
    for t in inputs:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_samples is None or n <= max_samples else rng.choice(n, max_samples, replace=False)
        numeric = np.empty(len(idx))
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = fn().item()
                flat[i] = orig - eps
                fm = fn().item()
                flat[i] = orig
                numeric[j] = (fp - fm) / (2 * eps)
        pairs.append((analytic.reshape(-1)[idx], numeric))
    scale = max((float(np.abs(nm).max(initial=0.0)) for _, nm in pairs), default=0.0)
    scale_floor = max(floor, 1e-3 * scale)
    worst = 0.0
    for an, nm in pairs:
        if nm.size:
            worst = max(worst, float(relative_error(an, nm, scale_floor).max()))
    return worst
