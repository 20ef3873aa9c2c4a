from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from netmamba.errors import EmptyMailbox, MailboxBusy, NotFound
from netmamba.flow_repr import ReprConfig
from netmamba.model import ModelConfig, NetMamba
from netmamba.online import (US, BatchMailbox, ClassifiedFlow, FlowTable, PendingSample, ResultStore, cdf_rows,
                             evict, flush, ingest_packet, make_server, query_results, replay)
from netmamba.packet_io import FiveTuple, PacketRecord

CFG = ReprConfig()
K = [FiveTuple.from_strings("10.0.0.1", "10.0.0.2", i, 80, 6) for i in range(4)]


def _rec(t, key):
    return PacketRecord(t, key, b"h" * 40, b"p" * 20, 60)


@pytest.fixture(scope="module")
def model():
    return NetMamba(ModelConfig.tiny(), 0, n_classes=3, with_decoder=False)


def test_flush_moves_ready_entries_only():
    table, box = FlowTable(), BatchMailbox()
    for i in range(5):
        ingest_packet(table, _rec(i, K[0]), i, CFG)
    ingest_packet(table, _rec(0, K[1]), 0, CFG)
    out = flush(table, box, 10, CFG)
    assert [s.key for s in out] == [K[0]] and list(table) == [K[1]]
    assert box.status == 1 and box.sample_size == 1


def test_evict_by_age():
    table = FlowTable()
    ingest_packet(table, _rec(0, K[0]), 0, CFG)
    ingest_packet(table, _rec(5 * US, K[1]), 5 * US, CFG)
    assert evict(table, 10 * US - 1, 10.0) == []
    assert evict(table, 10 * US, 10.0) == [K[0]] and list(table) == [K[1]]


def test_mailbox_merge_busy_and_empty():
    box = BatchMailbox()
    with pytest.raises(EmptyMailbox):
        box.take()
    item = PendingSample(None, 5, 0, 0, 0.0)
    box.put([item])
    with pytest.raises(MailboxBusy):
        box.put([item], merge=False)
    box.put([item])
    assert box.merges == 1 and len(box.take()) == 2 and box.status == 0
    box.put([])  # no-op
    assert box.status == 0


def test_mailbox_wait_wakes_on_put():
    box = BatchMailbox()
    threading.Timer(0.05, lambda: box.put([PendingSample(None, 5, 0, 0, 0.0)])).start()
    assert len(box.take(wait=5.0)) == 1


def test_replay_short_flows_never_classified(model):
    recs = [_rec(i * 1000, K[0]) for i in range(2)] + [_rec(i * 1000, K[1]) for i in range(3)]
    rep = replay(sorted(recs, key=lambda r: r.arrival_time), model, CFG, W_g=3.0, W_r=10.0)
    assert rep.results == [] and set(rep.evicted) == {K[0], K[1]}


def test_replay_inline_and_threaded_agree(model):
    recs = sorted([_rec(i * 200_000 + j, K[j]) for i in range(6) for j in range(3)], key=lambda r: r.arrival_time)
    a = replay(recs, model, CFG)
    b = replay(recs, model, CFG, threaded=True)
    assert sorted(map(str, (r.key for r in a.results))) == sorted(map(str, (r.key for r in b.results)))
    assert len(a.results) == 3
    za, zb = dict((str(k), z) for k, z in a.logits), dict((str(k), z) for k, z in b.logits)
    assert all(np.array_equal(za[k], zb[k]) for k in za)


def test_speed_factor_only_rescales_wall_time(model):
    recs = [_rec(i * US, K[0]) for i in range(6)]
    a, b = replay(recs, model, CFG), replay(recs, model, CFG, speed_factor=5.0)
    assert b.simulated_wall_seconds == pytest.approx(a.simulated_wall_seconds / 5)
    assert [r.label for r in a.results] == [r.label for r in b.results]


def test_result_store_roundtrip_and_query(tmp_path):
    store = ResultStore(tmp_path / "r.jsonl", header={"seed": 1})
    store.append([ClassifiedFlow(K[0], 1, 0.9, 5, 0, 5), ClassifiedFlow(K[1], 2, 0.8, 6, 0, 7)])
    store.append([ClassifiedFlow(K[0], 0, 0.7, 9, 1, 5)])
    back = ResultStore.load(tmp_path / "r.jsonl")
    assert query_results(back, K[0])["label"] == 0
    page = query_results(back, "all", offset=1, limit=1)
    assert page["total"] == 3 and len(page["flows"]) == 1
    with pytest.raises(NotFound):
        query_results(back, K[3])
    with pytest.raises(ValueError):
        query_results(back, "some")


def test_http_endpoints():
    store = ResultStore()
    store.append([ClassifiedFlow(K[0], 1, 0.9, 5, 0, 5)])
    srv = make_server(store, lambda: {"batches": 1})
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    try:
        get = lambda p: json.loads(urllib.request.urlopen(base + p, timeout=5).read())  # noqa: E731
        assert get("/stats") == {"batches": 1}
        assert get("/flows/all")["total"] == 1
        assert get("/flows?src=10.0.0.1&dst=10.0.0.2&sport=0&dport=80&proto=6")["label"] == 1
        for path, code in [("/flows?src=10.0.0.9&dst=10.0.0.2&sport=0&dport=80&proto=6", 404),
                           ("/flows?src=10.0.0.1", 400), ("/nope", 404)]:
            with pytest.raises(urllib.error.HTTPError) as exc:
                urllib.request.urlopen(base + path, timeout=5)
            assert exc.value.code == code
    finally:
        srv.shutdown()


def test_cdf_rows():
    assert cdf_rows([3.0, 1.0]) == [(1.0, 0.5), (3.0, 1.0)]
