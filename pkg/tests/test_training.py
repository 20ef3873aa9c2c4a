from __future__ import annotations

import csv

import numpy as np
import pytest

from netmamba.config import FinetuneConfig, LdaConfig, PretrainConfig
from netmamba.errors import EmptyDataset, EmptySplit, LabelOutOfRange, PlanMismatch, RatioOutOfRange
from netmamba.finetune import (cb_weight, ce_loss, class_histogram, default_margin_c, finetune_loop, lda_loss,
                               ldam_loss, ldam_margins, load_backbone, load_classifier, ood_decide, ood_score,
                               predict_logits)
from netmamba.flow_repr import ReprConfig
from netmamba.metrics import split
from netmamba.model import ModelConfig, NetMamba
from netmamba.pretrain import (decode_assemble, make_mask_plan, mask_strides, n_visible_for, pretrain_loop,
                               shuffle_tokens, unshuffle_tokens, zero_mask_sequence)
from netmamba.synthetic import synthetic_samples
from netmamba.tensor import Tensor, precision

SMALL = ReprConfig(M_b=1, N_h=20, N_p=20, M_seq=4)


def _tiny(**kw):
    return ModelConfig.tiny(n_stride=SMALL.n_stride, m_seq=SMALL.M_seq, **kw)


@pytest.fixture(scope="module")
def corpus():
    return synthetic_samples([30, 30], seed=0, cfg=SMALL, packets_per_flow=3)


def test_mask_plan_counts_and_inverse(rng):
    assert n_visible_for(400, 0.9) == 41
    with pytest.raises(RatioOutOfRange):
        n_visible_for(10, 1.0)
    plan = make_mask_plan(3, 20, 0.75, 0)
    assert plan.n_visible == 6 and plan.keep.shape == (3, 5) and plan.masked.sum() == 3 * 15
    x = Tensor(rng.normal(size=(3, 20, 2)))
    assert np.array_equal(unshuffle_tokens(shuffle_tokens(x, plan.permutation), plan.permutation).data, x.data)


def test_mask_strides_keeps_trailing_tokens(rng):
    X0 = rng.normal(size=(2, 11, 3))
    vis, plan = mask_strides(X0, 0.5, 1, n_stride=8)
    assert vis.shape == (2, plan.n_keep + 3, 3)
    assert np.array_equal(vis.data[:, -3:], X0[:, 8:])


def test_decode_assemble_places_rows(rng):
    plan = make_mask_plan(1, 6, 0.5, 2)
    enc = rng.normal(size=(1, plan.n_keep + 1, 2))
    out = decode_assemble(enc, plan, np.full(2, 9.0), np.zeros((7, 2))).data
    for j, s in enumerate(plan.keep[0]):
        assert np.array_equal(out[0, s], enc[0, j])
    assert np.all(out[0, :6][plan.masked[0]] == 9.0) and np.array_equal(out[0, 6], enc[0, -1])
    with pytest.raises(PlanMismatch):
        decode_assemble(enc[:, :2], plan, np.zeros(2), np.zeros((7, 2)))


def test_zero_mask_sequence_count():
    tok = np.arange(1, 21).reshape(1, 20).repeat(4, 0)
    out, z = zero_mask_sequence(tok, 0.15, 0)
    assert np.all(z.sum(1) == 3) and np.all(out[z] == 0) and np.array_equal(out[~z], tok[~z])
    with pytest.raises(RatioOutOfRange):
        zero_mask_sequence(tok, -0.1, 0)


def test_loss_helpers():
    hist = np.array([100, 10, 1])
    assert cb_weight(1, 0.9) == pytest.approx(1.0) and cb_weight(5, 0.0) == 1.0
    assert np.allclose(ldam_margins(hist, 1.0), hist ** -0.25)
    assert ldam_margins(hist, default_margin_c(hist, 0.5)).max() == pytest.approx(0.5)
    with pytest.raises(LabelOutOfRange):
        class_histogram([0, 3], 3)
    with precision("float64"):
        z = Tensor(np.array([[2.0, 0.0, -1.0]]))
        assert ldam_loss(z, [0], hist, 0.0).item() == pytest.approx(ce_loss(z, [0]).item())
        assert lda_loss(z, [1], hist, 0.0, 0.0).item() == pytest.approx(ce_loss(z, [1]).item())
        assert ce_loss(np.array([0.0, 0.0]), 1).item() == pytest.approx(np.log(2))


def test_ood_score_and_decide():
    assert ood_score(np.array([0.0, 0.0])) == pytest.approx(-np.log(2))
    assert ood_decide(-0.6931, -0.5) == 1 and ood_decide(-0.1, -0.5) == 0
    z = np.array([[3.0, 1.0], [10.0, 10.0]])
    assert np.allclose(ood_score(z), ood_score(z + 7.0))
    assert ood_score(z[0], 0.5) > ood_score(z[0], 2.0)


def test_pretrain_loop_writes_loss_curve(tmp_path, corpus):
    with pytest.raises(EmptyDataset):
        pretrain_loop([], _tiny(), PretrainConfig(steps=1))
    res = pretrain_loop(corpus, _tiny(multimodal=True), PretrainConfig(steps=3, batch_size=8, warmup_steps=1),
                        seed=1, out=tmp_path / "pre")
    assert len(res.history) == 3 and {"stride", "size", "interval", "total"} <= set(res.history[0])
    rows = list(csv.DictReader(open(tmp_path / "pre" / "loss.csv")))
    assert [int(r["step"]) for r in rows] == [0, 1, 2]
    again = pretrain_loop(corpus, _tiny(multimodal=True), PretrainConfig(steps=3, batch_size=8, warmup_steps=1),
                          seed=1)
    assert [h["total"] for h in again.history] == [h["total"] for h in res.history]


def test_finetune_loop_from_checkpoint(tmp_path, corpus):
    train, val, test = split(corpus, seed=0)
    pretrain_loop(corpus, _tiny(), PretrainConfig(steps=2, batch_size=8), seed=0, out=tmp_path / "pre")
    ft = finetune_loop(train, val, _tiny(), FinetuneConfig(epochs=3, batch_size=8), LdaConfig(),
                       init=tmp_path / "pre", seed=0, test=test, out=tmp_path / "ft")
    assert len(ft.history) == 3 and ft.best_val_acc == max(h["val_acc"] for h in ft.history)
    model, meta = load_classifier(tmp_path / "ft")
    assert meta["n_classes"] == 2 and meta["best_epoch"] == ft.best_epoch
    assert np.array_equal(predict_logits(model, test), predict_logits(ft.model, test))
    with pytest.raises(ValueError):
        load_classifier(tmp_path / "pre")
    with pytest.raises(EmptySplit):
        finetune_loop(train, [], _tiny(), FinetuneConfig(epochs=1))


def test_finetune_stops_at_target_and_lda_runs(corpus):
    train, val, _ = split(corpus, seed=0)
    ft = finetune_loop(train, val, _tiny(), FinetuneConfig(epochs=5, batch_size=8, loss="lda",
                                                           target_val_acc=0.0), seed=0)
    assert len(ft.history) == 1 and ft.margin_c > 0


def test_load_backbone_rejects_incomplete_state():
    model = NetMamba(_tiny(), 0, n_classes=2, with_decoder=False)
    src = NetMamba(_tiny(), 1, n_classes=0, with_decoder=True)
    loaded = load_backbone(model, src.state_dict())
    assert loaded and all(n.startswith(("embed.", "encoder.")) for n in loaded)
    with pytest.raises(KeyError):
        load_backbone(model, {"embed.cls_token": np.zeros(32)})
