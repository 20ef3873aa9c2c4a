# coding: utf-8

# # Replaying a capture through the online engine
#
# Packets enter a flow table.  Every W_g seconds of capture time, flows
# with at least 5 packets move to the classifier and leave the table, and
# entries older than W_r seconds are dropped.  Results can be queried by
# 5-tuple, from Python or over HTTP.

import json
import threading
import urllib.request

from netmamba.model import ModelConfig, NetMamba
from netmamba.online import ResultStore, make_server, query_results, replay
from netmamba.packet_io import read_packets
from netmamba.synthetic import synthetic_capture

pcap, _ = synthetic_capture({0: 10, 1: 10}, seed=1, packets_per_flow=6, spacing_us=400_000)
records = read_packets(pcap)
model = NetMamba(ModelConfig.tiny(), 0, n_classes=2, with_decoder=False)  # untrained, for plumbing only

store = ResultStore()
report = replay(records, model, W_g=3.0, W_r=10.0, store=store)
print(json.dumps(report.summary(), indent=1))

# ## Query one flow

key = report.results[0].key
print(query_results(store, key))

# ## The same over HTTP

srv = make_server(store, report.summary)
threading.Thread(target=srv.serve_forever, daemon=True).start()
port = srv.server_address[1]
q = f"src={key.src}&dst={key.dst}&sport={key.src_port}&dport={key.dst_port}&proto={key.protocol}"
print(json.loads(urllib.request.urlopen(f"http://127.0.0.1:{port}/flows?{q}").read()))
print(json.loads(urllib.request.urlopen(f"http://127.0.0.1:{port}/flows/all?limit=2").read())["total"], "flows stored")
srv.shutdown()
