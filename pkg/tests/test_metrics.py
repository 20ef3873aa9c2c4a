from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netmamba.config import SplitConfig
from netmamba.errors import TooFewSamples
from netmamba.flow_repr import FlowSample, ReprConfig
from netmamba.metrics import (ami_stride_scores, auroc, classification_metrics, few_shot_subsample,
                              fpr_at_95_tpr, roc_points, split)
from netmamba.packet_io import FiveTuple


def _samples(counts, L_b=16):
    out, i = [], 0
    for c, n in enumerate(counts):
        for _ in range(n):
            key = FiveTuple.from_strings("10.0.0.1", "10.0.0.2", i, 80, 6)
            out.append(FlowSample(key, np.zeros(L_b, np.uint8), np.zeros(20, np.int64), np.zeros(20), 1000 - i, c))
            i += 1
    return out


def test_random_split_is_8_1_1_per_class_and_disjoint():
    s = _samples([100, 30, 3])
    tr, va, te = split(s, seed=1)
    assert len(tr) + len(va) + len(te) == 133
    per = lambda part, c: sum(x.label == c for x in part)  # noqa: E731
    assert (per(tr, 0), per(va, 0), per(te, 0)) == (80, 10, 10)
    assert (per(tr, 2), per(va, 2), per(te, 2)) == (1, 1, 1)
    ids = [id(x) for x in tr + va + te]
    assert len(set(ids)) == len(ids)
    assert [x.key for x in split(s, seed=1)[0]] == [x.key for x in tr]


def test_split_cap_and_too_few():
    tr, va, te = split(_samples([50, 5]), SplitConfig(per_category_cap=10))
    assert sum(x.label == 0 for x in tr + va + te) == 10
    with pytest.raises(TooFewSamples):
        split(_samples([10, 2]))


def test_time_split_orders_by_first_packet():
    s = _samples([10, 10])
    tr, va, te = split(s, SplitConfig(mode="time"))
    assert (len(tr), len(va), len(te)) == (16, 2, 2)
    assert max(x.first_ts for x in tr) < min(x.first_ts for x in va + te)


def test_few_shot_fraction_per_class():
    s = _samples([100, 10])
    sub = few_shot_subsample(s, 0.1, seed=0)
    assert sum(x.label == 0 for x in sub) == 10 and sum(x.label == 1 for x in sub) == 1
    assert few_shot_subsample(s, 1.0) == s
    with pytest.raises(ValueError):
        few_shot_subsample(s, 0)


def test_classification_metrics_reference_case():
    m = classification_metrics([0, 0, 1, 1], [0, 1, 1, 1])
    assert m["accuracy"] == 0.75 and m["f1_weighted"] == pytest.approx(0.7333333, abs=1e-4)
    assert m["confusion"] == [[1, 1], [0, 2]] and m["recall_per_class"] == [0.5, 1.0]


def _pairwise(a, b):
    return sum((x > y) + 0.5 * (x == y) for x in a for y in b) / (len(a) * len(b))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=12), st.lists(st.integers(-3, 3), min_size=1, max_size=12))
def test_auroc_matches_pairwise(a, b):
    assert auroc(a, b) == pytest.approx(_pairwise(a, b), abs=1e-12)


def test_auroc_and_fpr95_extremes():
    assert auroc([5, 6], [1, 2]) == 1.0 and auroc([1, 2], [5, 6]) == 0.0
    assert fpr_at_95_tpr([5, 6], [1, 2]) == 0.0
    assert fpr_at_95_tpr([1, 2], [5, 6]) == 1.0
    with pytest.raises(ValueError):
        auroc([], [1])


def test_roc_points_monotone():
    rng = np.random.default_rng(0)
    pts = roc_points(rng.normal(size=50), rng.normal(-1, size=40))
    assert np.all(np.diff(pts[:, 1]) >= 0) and np.all(np.diff(pts[:, 2]) >= 0)
    assert tuple(pts[-1, 1:]) == (1.0, 1.0) and tuple(pts[0, 1:]) == (0.0, 0.0)


def test_ami_grid_shape_and_extremes():
    cfg = ReprConfig(M_b=1, N_h=4, N_p=4, M_seq=2)
    s = _samples([20, 20], L_b=8)
    for x in s:
        x.byte_array[0:2] = x.label  # first stride determined by the label
    grid = ami_stride_scores(s, 2, cfg)
    assert grid.shape == (1, 4)
    assert grid[0, 0] == pytest.approx(1.0) and grid[0, 1] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        ami_stride_scores(s, 3, cfg)
