"""Build raw IPv4/IPv6 TCP/UDP packets and Ethernet frames.

Used to generate fixture captures and synthetic corpora.  Checksums are
computed so that third-party dissectors accept the output.
"""

from __future__ import annotations

import ipaddress
import struct

from .packet_io import ETH_ARP, ETH_IPV4, ETH_IPV6, PROTO_TCP, PROTO_UDP


def _csum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def tcp_segment(sport: int, dport: int, payload: bytes = b"", seq: int = 0, ack: int = 0,
                flags: int = 0x18, window: int = 65535, options: bytes = b"") -> bytes:
    if len(options) % 4:
        options += b"\x00" * (4 - len(options) % 4)
    off = (20 + len(options)) // 4
    return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, off << 4, flags, window, 0, 0) + options + payload


def udp_datagram(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def _with_l4_checksum(proto: int, seg: bytes, pseudo: bytes) -> bytes:
    pos = 16 if proto == PROTO_TCP else 6 if proto == PROTO_UDP else None
    if pos is None:
        return seg
    c = _csum(pseudo + seg) or 0xFFFF
    return seg[:pos] + struct.pack("!H", c) + seg[pos + 2:]


def ipv4_packet(src: str, dst: str, proto: int, segment: bytes, ttl: int = 64, ident: int = 0,
                tos: int = 0, dont_fragment: bool = True) -> bytes:
    s, d = ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed
    total = 20 + len(segment)
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, tos, total, ident, 0x4000 if dont_fragment else 0,
                      ttl, proto, 0, s, d)
    hdr = hdr[:10] + struct.pack("!H", _csum(hdr)) + hdr[12:]
    pseudo = s + d + struct.pack("!BBH", 0, proto, len(segment))
    return hdr + _with_l4_checksum(proto, segment, pseudo)


def ipv6_packet(src: str, dst: str, next_header: int, segment: bytes, hop_limit: int = 64,
                flow_label: int = 0) -> bytes:
    s, d = ipaddress.IPv6Address(src).packed, ipaddress.IPv6Address(dst).packed
    hdr = struct.pack("!IHBB16s16s", (6 << 28) | flow_label, len(segment), next_header, hop_limit, s, d)
    pseudo = s + d + struct.pack("!I3xB", len(segment), next_header)
    return hdr + _with_l4_checksum(next_header, segment, pseudo)


def ethernet_frame(payload: bytes, ethertype: int | None = None, src_mac: bytes = b"\x02\x00\x00\x00\x00\x01",
                   dst_mac: bytes = b"\x02\x00\x00\x00\x00\x02", vlan: int | None = None,
                   pad: bool = True) -> bytes:
    if ethertype is None:
        ethertype = ETH_IPV6 if payload and payload[0] >> 4 == 6 else ETH_IPV4
    tag = struct.pack("!HH", 0x8100, vlan) if vlan is not None else b""
    frame = dst_mac + src_mac + tag + struct.pack("!H", ethertype) + payload
    if pad and len(frame) < 60:
        frame += b"\x00" * (60 - len(frame))  # minimum Ethernet frame, trailer padding
    return frame


def arp_request(sender: str = "10.0.0.1", target: str = "10.0.0.2") -> bytes:
    body = struct.pack("!HHBBH6s4s6s4s", 1, ETH_IPV4, 6, 4, 1, b"\x02\x00\x00\x00\x00\x01",
                       ipaddress.IPv4Address(sender).packed, b"\x00" * 6,
                       ipaddress.IPv4Address(target).packed)
    return ethernet_frame(body, ETH_ARP, dst_mac=b"\xff" * 6)
