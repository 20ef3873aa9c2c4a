# coding: utf-8

# # From a capture to flow samples
#
# We build a small synthetic capture, read it back, group packets into
# flows and turn each flow into the fixed-size sample the model consumes.

import numpy as np

from netmamba.flow_repr import ReprConfig, extract_samples, split_flows
from netmamba.packet_io import filter_non_ip, read_packets
from netmamba.synthetic import synthetic_capture

# ## A capture with two traffic classes
#
# Each class has its own payload template, packet lengths and timing.
# The label map is keyed by each flow's source address.

pcap, label_of = synthetic_capture({0: 3, 1: 3}, seed=0, packets_per_flow=7)
print(len(pcap), "bytes of pcap,", len(label_of), "flows")

# ## Reading packets
#
# Records come back in arrival order.  Addresses and ports are zeroed in
# the header bytes, while the 5-tuple key is kept on the side.

records = filter_non_ip(read_packets(pcap))
r = records[0]
print(r.tuple, len(r.header_bytes), "header bytes,", len(r.payload_bytes), "payload bytes")
print("source address bytes after anonymization:", r.header_bytes[12:16])

# ## Flows
#
# A flow is every packet sharing the same directed 5-tuple.

flows = split_flows(records)
for key, pkts in list(flows.items())[:3]:
    print(key, len(pkts), "packets")

# ## Samples
#
# The first 5 packets give 5 x (80 header + 240 payload) = 1600 bytes, cut
# into 400 strides of 4 bytes.  Sizes (clamped at the MTU) and normalized
# gaps of the first 20 packets ride along.

cfg = ReprConfig()
samples = extract_samples(records, cfg)
s = samples[0]
print("byte array", s.byte_array.shape, "strides", s.strides.shape)
print("sizes", s.size_seq[:8])
print("intervals", np.round(s.interval_seq[:8], 4))

# The first interval is always 0.5, and later ones map a gap of x seconds
# to (1 + x) / (2 + x), so every value lies in [0.5, 1).

assert s.interval_seq[0] == 0.5
