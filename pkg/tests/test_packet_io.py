from __future__ import annotations

import io
import struct

import dpkt
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netmamba.craft import arp_request, ethernet_frame, ipv4_packet, ipv6_packet, tcp_segment, udp_datagram
from netmamba.errors import HeaderTooShort, MalformedGlobalHeader, TruncatedRecord, UnsupportedLinkType
from netmamba.packet_io import (LINKTYPE_LINUX_SLL, LINKTYPE_RAW, PROTO_ICMP, PROTO_TCP, PROTO_UDP, FiveTuple,
                                anonymize, dissect_ip, filter_non_ip, parse_capture, read_packets, write_capture)

from .conftest import FIXTURES

T0 = 1_700_000_000_000_000


def _tcp(src="10.0.0.1", dst="10.0.0.2", sport=1000, dport=80, payload=b"hello", **kw):
    return ipv4_packet(src, dst, PROTO_TCP, tcp_segment(sport, dport, payload, **kw))


def test_five_tuple_roundtrip_and_directed():
    k = FiveTuple.from_strings("10.0.0.1", "2001:db8::1", 1, 2, 6)
    assert FiveTuple.from_json(k.to_json()) == k
    assert k.src == "10.0.0.1" and k.dst == "2001:db8::1"
    rev = FiveTuple.from_strings("2001:db8::1", "10.0.0.1", 2, 1, 6)
    assert rev != k  # no direction normalization
    assert str(k) == "10.0.0.1:1->2001:db8::1:2/6"


def test_dissect_ipv4_tcp_with_options():
    ip = ipv4_packet("1.2.3.4", "5.6.7.8", PROTO_TCP, tcp_segment(1, 2, b"x" * 10, options=b"\x01" * 8))
    r = dissect_ip(ip, 5)
    assert r.tuple == FiveTuple.from_strings("1.2.3.4", "5.6.7.8", 1, 2, 6)
    assert len(r.header_bytes) == 20 + 28 and r.payload_bytes == b"x" * 10
    assert r.wire_length == len(ip) == 58 and r.arrival_time == 5


def test_dissect_ipv6_udp_and_icmp():
    r = dissect_ip(ipv6_packet("::1", "::2", PROTO_UDP, udp_datagram(53, 54, b"abc")), 0)
    assert len(r.header_bytes) == 48 and r.payload_bytes == b"abc" and r.wire_length == 51
    icmp = ipv4_packet("1.1.1.1", "2.2.2.2", PROTO_ICMP, bytes([8, 0, 0, 0, 0, 1, 0, 1]) + b"ping")
    r = dissect_ip(icmp, 0)
    assert r.tuple.src_port == 0 and r.tuple.dst_port == 0 and r.payload_bytes == b"ping"


def test_trailer_padding_is_stripped():
    ip = _tcp(payload=b"")
    frame = ethernet_frame(ip)  # padded to 60 bytes
    assert len(frame) == 60
    (rec,) = parse_capture(write_capture([(0, frame)]))
    assert rec.wire_length == 40 and rec.payload_bytes == b""


def test_filter_drops_non_ip_and_dhcp():
    frames = [(0, arp_request()), (1, ethernet_frame(ipv4_packet("0.0.0.0", "255.255.255.255", PROTO_UDP,
                                                                  udp_datagram(68, 67, b"d")))),
              (2, ethernet_frame(_tcp()))]
    recs = parse_capture(write_capture(frames))
    assert len(recs) == 3
    kept = filter_non_ip(recs)
    assert [r.arrival_time for r in kept] == [2]
    assert len(filter_non_ip(recs, exclude_dhcp=False)) == 2


def test_anonymize_zeroes_addresses_and_ports():
    r = anonymize(dissect_ip(_tcp(), 0))
    h = r.header_bytes
    assert h[12:20] == bytes(8) and h[20:24] == bytes(4)
    assert r.tuple.src == "10.0.0.1"  # out-of-band key kept
    r6 = anonymize(dissect_ip(ipv6_packet("2001:db8::1", "2001:db8::2", PROTO_UDP, udp_datagram(5, 6)), 0))
    assert r6.header_bytes[8:40] == bytes(32) and r6.header_bytes[40:44] == bytes(4)


def test_anonymize_rejects_short_header():
    from netmamba.packet_io import PacketRecord

    with pytest.raises(HeaderTooShort):
        anonymize(PacketRecord(0, None, b"\x45" + bytes(5), b"", 6))


@pytest.mark.parametrize("nanos,big", [(False, False), (True, False), (False, True), (True, True)])
def test_pcap_variants(nanos, big):
    frames = [(T0 + 7, ethernet_frame(_tcp())), (T0 + 3, ethernet_frame(_tcp(sport=9)))]
    recs = parse_capture(write_capture(frames, nanos=nanos, big_endian=big))
    assert [r.arrival_time for r in recs] == [T0 + 7, T0 + 3]  # file order
    assert [r.arrival_time for r in read_packets(write_capture(frames))] == [T0 + 3, T0 + 7]  # time order


def test_raw_and_sll_linktypes():
    ip = _tcp()
    (raw,) = parse_capture(write_capture([(0, ip)], linktype=LINKTYPE_RAW))
    sll = bytes(14) + struct.pack("!H", 0x0800) + ip
    (cooked,) = parse_capture(write_capture([(0, sll)], linktype=LINKTYPE_LINUX_SLL))
    assert raw.tuple == cooked.tuple and raw.header_bytes == cooked.header_bytes


def test_vlan_tag():
    (rec,) = parse_capture(write_capture([(0, ethernet_frame(_tcp(), vlan=7))]))
    assert rec.tuple.dst_port == 80


def test_malformed_inputs():
    with pytest.raises(MalformedGlobalHeader):
        parse_capture(b"\x00" * 10)
    with pytest.raises(MalformedGlobalHeader):
        parse_capture(b"\x00" * 24)
    good = write_capture([(0, ethernet_frame(_tcp()))])
    with pytest.raises(TruncatedRecord):
        parse_capture(good[:-5])
    with pytest.raises(TruncatedRecord):
        parse_capture(good + b"\x01\x02")
    with pytest.raises(UnsupportedLinkType):
        parse_capture(write_capture([], linktype=147))


def test_snaplen_truncated_ports_still_anonymized():
    ip = _tcp()[:22]  # IP header plus half the source port
    frame = ethernet_frame(ip, pad=False)
    recs = read_packets(write_capture([(0, frame)]))
    assert len(recs) == 1
    assert recs[0].header_bytes[20:22] == bytes(2)


def test_file_and_stream_sources(tmp_path):
    data = write_capture([(0, ethernet_frame(_tcp()))])
    p = tmp_path / "x.pcap"
    p.write_bytes(data)
    assert parse_capture(p) == parse_capture(str(p)) == parse_capture(io.BytesIO(data)) == parse_capture(data)


def test_against_dpkt_on_golden_capture():
    """dpkt independently decodes the golden capture; header/payload split and keys must agree."""
    ours = [r for r in parse_capture(FIXTURES / "golden.pcap")]
    with open(FIXTURES / "golden.pcap", "rb") as fh:
        theirs = list(dpkt.pcap.Reader(fh))
    assert len(ours) == len(theirs)
    for rec, (ts, buf) in zip(ours, theirs):
        assert rec.arrival_time == round(ts * 1e6)
        eth = dpkt.ethernet.Ethernet(buf)
        ip = eth.data
        if not isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
            assert rec.tuple is None
            continue
        # dpkt supplies the field values; bytes are sliced from the frame (re-serializing would refill checksums)
        l4 = ip.data
        link = 14 + 4 * len(getattr(eth, "vlan_tags", None) or [])
        if isinstance(ip, dpkt.ip.IP):
            ip_hl, wire = ip.hl * 4, ip.len
        else:
            ip_hl, wire = 40, 40 + ip.plen
        raw = buf[link:link + wire]
        assert rec.wire_length == wire
        if isinstance(l4, dpkt.tcp.TCP):
            l4_len, ports = l4.off * 4, (l4.sport, l4.dport)
        elif isinstance(l4, dpkt.udp.UDP):
            l4_len, ports = 8, (l4.sport, l4.dport)
        else:  # ICMP: 8-byte header by our convention
            l4_len, ports = 8, (0, 0)
        hdr, l4_hdr, payload = raw[:ip_hl], raw[ip_hl:ip_hl + l4_len], raw[ip_hl + l4_len:]
        assert rec.header_bytes == hdr + l4_hdr
        assert rec.payload_bytes == payload
        assert (rec.tuple.src_port, rec.tuple.dst_port) == ports
        assert rec.tuple.protocol == (ip.p if isinstance(ip, dpkt.ip.IP) else ip.nxt)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2**40), st.binary(min_size=0, max_size=300),
                          st.integers(0, 65535), st.integers(0, 65535), st.booleans()),
                min_size=0, max_size=8))
def test_write_parse_roundtrip(items):
    frames = []
    for ts, payload, sport, dport, tcp in items:
        ip = _tcp(sport=sport, dport=dport, payload=payload) if tcp else \
            ipv4_packet("10.0.0.3", "10.0.0.4", PROTO_UDP, udp_datagram(sport, dport, payload))
        frames.append((ts, ethernet_frame(ip)))
    recs = parse_capture(write_capture(frames))
    assert len(recs) == len(items)
    for rec, (ts, payload, sport, dport, tcp) in zip(recs, items):
        assert rec.arrival_time == ts
        assert rec.payload_bytes == payload
        assert (rec.tuple.src_port, rec.tuple.dst_port, rec.tuple.protocol) == (sport, dport, 6 if tcp else 17)
        assert rec.wire_length == len(rec.header_bytes) + len(payload)


def test_craft_checksums_verify_with_dpkt():
    ip = dpkt.ip.IP(_tcp(payload=b"abc"))
    sent = ip.sum
    ip.sum = 0
    assert dpkt.ip.IP(bytes(ip)).sum == sent
    tcp_sum = ip.data.sum
    ip.data.sum = 0
    ip.sum = 0
    assert dpkt.ip.IP(bytes(ip)).data.sum == tcp_sum


def test_ipv6_fragment_and_extension_headers():
    seg = udp_datagram(7, 8, b"zz")
    # hop-by-hop (8 bytes) then UDP
    hop = bytes([PROTO_UDP, 0]) + bytes(6)
    ip = ipv6_packet("::1", "::2", 0, hop + seg)
    r = dissect_ip(ip, 0)
    assert (r.tuple.src_port, r.tuple.dst_port, r.tuple.protocol) == (7, 8, PROTO_UDP)
    assert len(r.header_bytes) == 40 + 8 + 8
    # a non-first fragment carries no transport header
    frag = bytes([PROTO_UDP, 0]) + struct.pack("!HI", 8 << 3, 1)
    r = dissect_ip(ipv6_packet("::1", "::2", 44, frag + b"rest"), 0)
    assert r.tuple.src_port == 0 and r.payload_bytes == b"rest"


def test_numpy_free_records_are_hashable():
    r = dissect_ip(_tcp(), 0)
    assert {r.tuple: 1}[r.tuple] == 1
    assert np.frombuffer(r.header_bytes, np.uint8).size == 40
