from __future__ import annotations

import numpy as np
import pytest

from netmamba.errors import ShapeMismatch
from netmamba.model import (Embedding, MambaBlock, ModelConfig, NetMamba, TransBlock, linear_recurrence_parallel,
                            linear_recurrence_sequential, make_blocks, naive_attention, selective_scan,
                            selective_scan_sequential, sinusoidal_encode, streaming_attention)
from netmamba.tensor import Tensor, precision


def _batch(rng, B=2, cfg=None):
    cfg = cfg or ModelConfig.tiny()
    return {"strides": rng.integers(0, 256, (B, cfg.n_stride, cfg.L_s)).astype(np.uint8),
            "sizes": rng.integers(0, 1501, (B, cfg.m_seq)),
            "intervals": rng.uniform(0.5, 1.0, (B, cfg.m_seq))}


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(block_kind="rnn")
    with pytest.raises(ValueError):
        ModelConfig(e_enc=100)
    with pytest.raises(ValueError):
        ModelConfig.tiny(block_kind="trans", n_heads=3)
    assert ModelConfig().seq_len == 401 and ModelConfig(multimodal=True).seq_len == 441
    assert ModelConfig.tiny(d_enc=48).e_enc == 96


def test_sinusoidal_encode_layout():
    out = sinusoidal_encode(np.array([0.0, 3.0]), 6)
    assert out.shape == (2, 6)
    assert np.allclose(out[0, 0::2], 0) and np.allclose(out[0, 1::2], 1)
    assert out[1, 0] == pytest.approx(np.sin(3.0)) and out[1, 1] == pytest.approx(np.cos(3.0))
    assert sinusoidal_encode(np.zeros(1), 5).shape == (1, 5)


def test_embedding_layout_and_shape_errors(rng):
    cfg = ModelConfig.tiny(multimodal=True)
    emb = Embedding(cfg.n_stride, cfg.L_s, cfg.d_enc, rng, True, cfg.m_seq)
    b = _batch(rng, 3, cfg)
    x = emb(b["strides"], b["sizes"], b["intervals"])
    assert x.shape == (3, cfg.seq_len, cfg.d_enc)
    # the class token is last and identical across samples
    assert np.allclose(x.data[0, -1], x.data[1, -1])
    with pytest.raises(ShapeMismatch):
        emb(b["strides"])
    with pytest.raises(ShapeMismatch):
        emb(b["strides"][:, :5], b["sizes"], b["intervals"])


@pytest.mark.parametrize("kind", ["mamba", "trans"])
@pytest.mark.parametrize("multimodal", [False, True])
def test_netmamba_shapes(rng, kind, multimodal):
    cfg = ModelConfig.tiny(block_kind=kind, multimodal=multimodal)
    model = NetMamba(cfg, 0, n_classes=3, with_decoder=True)
    b = _batch(rng, 2, cfg)
    assert model.features(b).shape == (2, cfg.d_enc)
    assert model.logits(b).shape == (2, 3)
    names = {n.split(".")[0] for n in model.state_dict()}
    assert names == {"embed", "encoder", "decoder", "head"}
    assert set(model.backbone_state()) == {n for n in model.state_dict() if n.split(".")[0] in ("embed", "encoder")}


def test_same_seed_same_weights():
    a, b = NetMamba(ModelConfig.tiny(), 3, 2), NetMamba(ModelConfig.tiny(), 3, 2)
    assert all(np.array_equal(a.state_dict()[k], v) for k, v in b.state_dict().items())
    with pytest.raises(RuntimeError):
        NetMamba(ModelConfig.tiny(), 0, n_classes=0).logits({})


def test_make_blocks():
    rng = np.random.default_rng(0)
    assert all(isinstance(b, MambaBlock) for b in make_blocks("mamba", 2, 8, 16, 4, rng))
    assert all(isinstance(b, TransBlock) for b in make_blocks("trans", 3, 8, 16, 4, rng, n_heads=2))
    with pytest.raises(ValueError):
        make_blocks("gru", 1, 8, 16, 4, rng)


def test_mamba_block_is_causal(rng):
    with precision("float64"):
        block = MambaBlock(8, 16, 4, np.random.default_rng(1))
        x = rng.normal(size=(1, 12, 8))
        y1 = block(Tensor(x)).data
        x2 = x.copy()
        x2[:, 7:] += 5.0
        y2 = block(Tensor(x2)).data
    assert np.allclose(y1[:, :7], y2[:, :7]) and not np.allclose(y1[:, 7:], y2[:, 7:])


def test_recurrence_parallel_matches_sequential(rng):
    a = rng.uniform(0, 1, (2, 37, 3))
    b = rng.normal(size=(2, 37, 3))
    assert np.allclose(linear_recurrence_parallel(a, b), linear_recurrence_sequential(a, b), rtol=1e-12)


def test_selective_scan_shapes_and_reference(rng):
    abar = rng.uniform(0.5, 1, (2, 9, 3, 4))
    bbar, c, x = rng.normal(size=(2, 9, 3, 4)), rng.normal(size=(2, 9, 4)), rng.normal(size=(2, 9, 3))
    with precision("float64"):
        y = selective_scan(abar, bbar, c, x).data
    assert np.allclose(y, selective_scan_sequential(abar, bbar, c, x))
    with pytest.raises(ShapeMismatch):
        selective_scan(abar, bbar, c[:, :, :3], x)


@pytest.mark.parametrize("block", [1, 7, 64, 1000])
def test_streaming_attention_block_sizes(rng, block):
    q, k, v = (rng.normal(size=(2, 2, 50, 8)) for _ in range(3))
    with precision("float64"):
        out = streaming_attention(q, k, v, block=block).data
    assert np.allclose(out, naive_attention(q, k, v), rtol=1e-12, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        streaming_attention(q, k[..., :4], v)
