"""Splits, classification and OOD metrics, and per-position stride AMI."""

from __future__ import annotations

import warnings
from collections import defaultdict
from typing import Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import adjusted_mutual_info_score, confusion_matrix, precision_recall_fscore_support

from .config import SplitConfig
from .errors import TooFewSamples
from .flow_repr import FlowSample, ReprConfig


def _by_class(samples: Sequence[FlowSample]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        if s.label is None:
            raise ValueError("split needs labeled samples")
        groups[int(s.label)].append(i)
    return dict(sorted(groups.items()))


def split(samples: Sequence[FlowSample], spec: SplitConfig | None = None, seed: int | np.random.Generator = 0
          ) -> tuple[list[FlowSample], list[FlowSample], list[FlowSample]]:
    """Train/val/test split.

    Random mode caps each class, shuffles it with the seed and splits it
    8:1:1 (at least one sample per part, so every class needs 3).  Time
    mode orders all flows by first packet time and cuts at 80% and 90%.
    """
    spec = spec or SplitConfig()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r_tr, r_va, _ = spec.ratios
    if spec.mode == "time":
        order = sorted(range(len(samples)), key=lambda i: (samples[i].first_ts, i))
        n = len(order)
        a, b = int(round(r_tr * n)), int(round((r_tr + r_va) * n))
        return ([samples[i] for i in order[:a]], [samples[i] for i in order[a:b]],
                [samples[i] for i in order[b:]])
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for c, idx in _by_class(samples).items():
        idx = np.asarray(idx)
        if spec.per_category_cap is not None and len(idx) > spec.per_category_cap:
            idx = np.sort(rng.choice(idx, spec.per_category_cap, replace=False))
        if len(idx) < 3:
            raise TooFewSamples(f"class {c} has {len(idx)} samples; at least 3 are needed")
        idx = rng.permutation(idx)
        n = len(idx)
        n_va = max(1, int(round(r_va * n)))
        n_te = max(1, n - n_va - max(1, int(round(r_tr * n))))
        n_tr = n - n_va - n_te
        parts[0].extend(idx[:n_tr])
        parts[1].extend(idx[n_tr:n_tr + n_va])
        parts[2].extend(idx[n_tr + n_va:])
    return tuple([samples[i] for i in sorted(p)] for p in parts)  # type: ignore[return-value]


def few_shot_subsample(train: Sequence[FlowSample], fraction: float, seed: int | np.random.Generator = 0
                       ) -> list[FlowSample]:
    """Keep round(fraction * n_c) samples of each class c (at least one)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return list(train)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = []
    for _, idx in _by_class(train).items():
        k = max(1, int(round(fraction * len(idx))))
        keep.extend(rng.choice(idx, k, replace=False))
    return [train[i] for i in sorted(keep)]


def classification_metrics(y_true, y_pred, labels: Sequence[int] | None = None) -> dict:
    """Accuracy, macro precision/recall, weighted F1 and the confusion matrix."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if labels is None:
        labels = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    labels = list(labels)
    p, r, _, _ = precision_recall_fscore_support(y_true, y_pred, labels=labels, average="macro", zero_division=0)
    _, _, f1, _ = precision_recall_fscore_support(y_true, y_pred, labels=labels, average="weighted",
                                                  zero_division=0)
    _, rec_c, _, support = precision_recall_fscore_support(y_true, y_pred, labels=labels, average=None,
                                                           zero_division=0)
    return {
        "accuracy": float(np.mean(y_true == y_pred)) if y_true.size else 0.0,
        "precision_macro": float(p),
        "recall_macro": float(r),
        "f1_weighted": float(f1),
        "recall_per_class": [float(v) for v in rec_c],
        "support": [int(v) for v in support],
        "labels": [int(v) for v in labels],
        "confusion": confusion_matrix(y_true, y_pred, labels=labels).tolist(),
    }


def auroc(scores_id, scores_ood) -> float:
    """P(id score > ood score) + 0.5 P(tie), via the Mann-Whitney rank sum."""
    a = np.asarray(scores_id, dtype=np.float64).ravel()
    b = np.asarray(scores_ood, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("auroc needs both score sets non-empty")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def roc_points(scores_id, scores_ood) -> np.ndarray:
    """(threshold, fpr, tpr) rows with OOD as the positive class, flagged when score < threshold."""
    a = np.sort(np.asarray(scores_id, dtype=np.float64).ravel())
    b = np.sort(np.asarray(scores_ood, dtype=np.float64).ravel())
    thr = np.concatenate([np.unique(np.concatenate([a, b])), [np.inf]])
    fpr = np.searchsorted(a, thr, side="left") / a.size
    tpr = np.searchsorted(b, thr, side="left") / b.size
    return np.stack([thr, fpr, tpr], axis=1)


def fpr_at_95_tpr(scores_id, scores_ood) -> float:
    """Smallest false-positive rate over thresholds reaching TPR >= 0.95."""
    pts = roc_points(scores_id, scores_ood)
    ok = pts[:, 2] >= 0.95
    return float(pts[ok, 1].min())


def ami_stride_scores(samples: Sequence[FlowSample], stride_width: int = 2, cfg: ReprConfig | None = None
                      ) -> np.ndarray:
    """AMI between each stride position's value and the class label.

    Returns a (M_b, packet_len / stride_width) grid: one row per packet,
    header strides first, then payload strides.
    """
    cfg = cfg or ReprConfig()
    if cfg.packet_len % stride_width:
        raise ValueError(f"packet length {cfg.packet_len} not divisible by stride width {stride_width}")
    labels = np.array([s.label for s in samples])
    data = np.stack([s.byte_array for s in samples]).reshape(len(samples), -1, stride_width)
    weights = 256 ** np.arange(stride_width - 1, -1, -1)
    values = (data.astype(np.int64) * weights).sum(-1)
    with warnings.catch_warnings():
        # byte values with many distinct levels trip sklearn's "looks like regression" heuristic
        warnings.simplefilter("ignore", UserWarning)
        scores = np.array([adjusted_mutual_info_score(labels, values[:, j]) for j in range(values.shape[1])])
    return scores.reshape(cfg.M_b, cfg.packet_len // stride_width)
