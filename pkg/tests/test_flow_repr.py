from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netmamba.errors import EmptyFlow, IndivisibleLength, NegativeInterval
from netmamba.flow_repr import (FlowSample, ReprConfig, build_byte_array, clamp_size, crop_pad_packet,
                                cut_strides, extract_samples, load_samples, normalize_interval, read_header,
                                save_samples, sequences_from_raw, split_flows, stack_samples)
from netmamba.packet_io import FiveTuple, PacketRecord

K1 = FiveTuple.from_strings("10.0.0.1", "10.0.0.2", 1, 2, 6)
K2 = FiveTuple.from_strings("10.0.0.2", "10.0.0.1", 2, 1, 6)


def _rec(t, key=K1, hdr=b"h" * 40, pay=b"p" * 10, wire=None):
    return PacketRecord(t, key, hdr, pay, wire if wire is not None else len(hdr) + len(pay))


def test_default_config_geometry():
    cfg = ReprConfig()
    assert cfg.packet_len == 320 and cfg.byte_len == 1600 and cfg.n_stride == 400


def test_config_validation():
    with pytest.raises(IndivisibleLength):
        ReprConfig(N_h=3, N_p=0, M_b=1, L_s=2)
    with pytest.raises(ValueError):
        ReprConfig(M_seq=5, M_b=5)
    with pytest.raises(ValueError):
        ReprConfig(L_s=0)


def test_split_flows_keeps_direction_and_order():
    recs = [_rec(0), _rec(1, K2), _rec(2)]
    flows = split_flows(recs)
    assert list(flows) == [K1, K2] and [r.arrival_time for r in flows[K1]] == [0, 2]


def test_crop_and_pad_per_packet():
    cfg = ReprConfig(M_b=2, N_h=8, N_p=4, M_seq=4)
    short = crop_pad_packet(_rec(0, hdr=b"abc", pay=b"xyz12345"), cfg)
    assert short == b"abc" + bytes(5) + b"xyz1"
    arr = build_byte_array([_rec(0, hdr=b"a" * 20, pay=b"")], cfg)
    assert arr.dtype == np.uint8 and arr.shape == (24,)
    assert bytes(arr[:8]) == b"a" * 8 and not arr[8:].any()  # missing packets are zero blocks


def test_build_rejects_empty_flow():
    with pytest.raises(EmptyFlow):
        build_byte_array([], ReprConfig())


def test_cut_strides_shape_and_errors():
    assert cut_strides(np.arange(12, dtype=np.uint8), 4).shape == (3, 4)
    assert cut_strides(np.zeros((2, 8)), 4).shape == (2, 2, 4)
    with pytest.raises(IndivisibleLength):
        cut_strides(np.zeros(10), 4)


def test_clamp_and_normalize():
    assert clamp_size(1600) == 1500 and clamp_size(60) == 60 and clamp_size(1600, mtu=9000) == 1600
    assert normalize_interval(0.0) == 0.5
    assert normalize_interval(2.0) == pytest.approx(0.75)
    assert np.allclose(normalize_interval([0.0, 1.0]), [0.5, 2 / 3])
    with pytest.raises(NegativeInterval):
        normalize_interval(-1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e9, allow_nan=False))
def test_normalize_interval_range_and_monotone(x):
    y = normalize_interval(x)
    assert 0.5 <= y < 1 or (x > 1e15 and y == 1)
    assert normalize_interval(x + 1.0) >= y


def test_sequences_first_interval_and_padding():
    cfg = ReprConfig(M_b=2, N_h=8, N_p=8, M_seq=5)
    sizes, ints = sequences_from_raw([100, 2000, 50], [0, 1_000_000, 3_000_000], cfg)
    assert sizes.tolist() == [100, 1500, 50, 0, 0]
    assert ints[:3] == pytest.approx([0.5, 2 / 3, 0.75]) and ints[3:].tolist() == [0, 0]
    sizes, ints = sequences_from_raw([70], [5], cfg)
    assert sizes[0] == 70 and ints[0] == 0.5


def test_extract_samples_min_packets_and_labels():
    recs = [_rec(i) for i in range(6)] + [_rec(10, K2)]
    out = extract_samples(recs, label=2, min_packets=5)
    assert [s.key for s in out] == [K1] and out[0].label == 2 and out[0].first_ts == 0
    assert len(extract_samples(recs)) == 2


def test_save_load_roundtrip_with_header(tmp_path):
    samples = extract_samples([_rec(i) for i in range(3)] + [_rec(5, K2)], label=1)
    p = tmp_path / "s.jsonl"
    save_samples(samples, p, header={"seed": 3})
    assert read_header(p) == {"seed": 3}
    back = load_samples(p)
    assert len(back) == 2
    for a, b in zip(samples, back):
        assert a.key == b.key and a.label == b.label and a.first_ts == b.first_ts
        assert np.array_equal(a.byte_array, b.byte_array) and np.array_equal(a.size_seq, b.size_seq)
        assert np.array_equal(a.interval_seq, b.interval_seq)
    save_samples(samples, p)
    assert read_header(p) is None and len(load_samples(p)) == 2


def test_stack_samples():
    s = extract_samples([_rec(i) for i in range(3)] + [_rec(5, K2)])
    b = stack_samples(s)
    assert b["strides"].shape == (2, 400, 4) and b["sizes"].shape == (2, 20)
    assert b["labels"].tolist() == [-1, -1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.binary(max_size=120), st.binary(max_size=400), st.integers(0, 10**7)),
                min_size=1, max_size=12))
def test_sample_invariants(pkts):
    cfg = ReprConfig()
    t, recs = 0, []
    for hdr, pay, gap in pkts:
        t += gap
        recs.append(_rec(t, hdr=hdr, pay=pay))
    (s,) = extract_samples(recs, cfg)
    assert s.byte_array.shape == (1600,) and s.strides.shape == (400, 4)
    n = min(len(recs), cfg.M_seq)
    assert np.all(s.size_seq[:n] <= 1500) and not s.size_seq[n:].any()
    assert s.interval_seq[0] == 0.5 and np.all((s.interval_seq[:n] >= 0.5) & (s.interval_seq[:n] < 1))
    again = FlowSample.from_json(s.to_json())
    assert np.array_equal(again.byte_array, s.byte_array)
