"""Classic pcap parsing, non-IP filtering and header anonymization.

Records come out of :func:`parse_capture` with the link layer stripped and
the IP + transport headers split from the transport payload.  The flow key
(:class:`FiveTuple`) is read once at parse time and carried out-of-band so
it survives :func:`anonymize`, which zeroes the address and port bytes.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable

from .errors import HeaderTooShort, MalformedGlobalHeader, TruncatedRecord, UnsupportedLinkType

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_ARP = 0x0806
_ETH_VLAN = (0x8100, 0x88A8, 0x9100)

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
LINKTYPE_LINUX_SLL2 = 276

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17
PROTO_ICMPV6 = 58

_MAGIC_US = 0xA1B2C3D4
_MAGIC_NS = 0xA1B23C4D
_IPV6_EXT = {0, 43, 60}  # hop-by-hop, routing, destination options (length-prefixed)
_IPV6_FRAG = 44
_V4_MAPPED = b"\x00" * 10 + b"\xff\xff"


def _canonical(addr: bytes) -> bytes:
    return _V4_MAPPED + addr if len(addr) == 4 else bytes(addr)


@dataclass(frozen=True, slots=True)
class FiveTuple:
    """Directed flow key. Addresses are 16-byte canonical (IPv4-mapped for v4)."""

    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    protocol: int

    @classmethod
    def from_strings(cls, src: str, dst: str, sport: int, dport: int, proto: int) -> "FiveTuple":
        return cls(_canonical(ipaddress.ip_address(src).packed),
                   _canonical(ipaddress.ip_address(dst).packed), int(sport), int(dport), int(proto))

    @staticmethod
    def _fmt(addr: bytes) -> str:
        ip = ipaddress.IPv6Address(addr)
        return str(ip.ipv4_mapped) if ip.ipv4_mapped is not None else str(ip)

    @property
    def src(self) -> str:
        return self._fmt(self.src_ip)

    @property
    def dst(self) -> str:
        return self._fmt(self.dst_ip)

    def to_json(self) -> dict:
        return {"src": self.src, "dst": self.dst, "sport": self.src_port,
                "dport": self.dst_port, "proto": self.protocol}

    @classmethod
    def from_json(cls, obj: dict) -> "FiveTuple":
        return cls.from_strings(obj["src"], obj["dst"], obj["sport"], obj["dport"], obj["proto"])

    def __str__(self) -> str:
        return f"{self.src}:{self.src_port}->{self.dst}:{self.dst_port}/{self.protocol}"


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """One captured packet with the link layer removed.

    ``link_proto`` is the ethertype of the link-level payload; records that
    are not IPv4/IPv6 carry ``tuple=None`` and are dropped by
    :func:`filter_non_ip`.  ``wire_length`` is the IP-layer length taken
    from the IP header, so it is unaffected by snaplen truncation and by the
    link type.
    """

    arrival_time: int
    tuple: FiveTuple | None
    header_bytes: bytes
    payload_bytes: bytes
    wire_length: int
    link_proto: int = ETH_IPV4


# --------------------------------------------------------------------------
# IP / transport dissection


def _l4_offset(header: bytes) -> tuple[int, int, bool]:
    """Return (transport offset, protocol, is_first_fragment) for an IP header."""
    if not header:
        raise HeaderTooShort("empty header")
    version = header[0] >> 4
    if version == 4:
        if len(header) < 20:
            raise HeaderTooShort(f"IPv4 header needs 20 bytes, got {len(header)}")
        ihl = (header[0] & 0x0F) * 4
        if ihl < 20 or len(header) < ihl:
            raise HeaderTooShort(f"IPv4 IHL claims {ihl} bytes, got {len(header)}")
        frag_off = struct.unpack_from("!H", header, 6)[0] & 0x1FFF
        return ihl, header[9], frag_off == 0
    if version == 6:
        if len(header) < 40:
            raise HeaderTooShort(f"IPv6 header needs 40 bytes, got {len(header)}")
        nxt, off, first = header[6], 40, True
        while nxt in _IPV6_EXT or nxt == _IPV6_FRAG:
            if len(header) < off + 8:
                raise HeaderTooShort("IPv6 extension header truncated")
            if nxt == _IPV6_FRAG:
                first = (struct.unpack_from("!H", header, off + 2)[0] >> 3) == 0
                nxt, off = header[off], off + 8
            else:
                nxt, off = header[off], off + (header[off + 1] + 1) * 8
        return off, nxt, first
    raise HeaderTooShort(f"not an IP header (version {version})")


def _transport_header_len(proto: int, seg: bytes) -> int:
    if proto == PROTO_TCP:
        if len(seg) < 20:
            return len(seg)
        return min(max((seg[12] >> 4) * 4, 20), len(seg))
    if proto == PROTO_UDP or proto in (PROTO_ICMP, PROTO_ICMPV6):
        return min(8, len(seg))
    return 0


def _has_ports(proto: int) -> bool:
    return proto in (PROTO_TCP, PROTO_UDP)


def dissect_ip(ip: bytes, arrival_time: int) -> PacketRecord:
    """Split an IP packet into header/payload and read its 5-tuple."""
    version = ip[0] >> 4 if ip else 0
    if version == 4 and len(ip) >= 20:
        total = struct.unpack_from("!H", ip, 2)[0]
        wire = total
        if 20 <= total <= len(ip):
            ip = ip[:total]  # strip link-layer trailer padding
        src, dst = ip[12:16], ip[16:20]
    elif version == 6 and len(ip) >= 40:
        plen = struct.unpack_from("!H", ip, 4)[0]
        wire = 40 + plen
        if wire <= len(ip):
            ip = ip[:wire]
        src, dst = ip[8:24], ip[24:40]
    else:
        raise HeaderTooShort(f"cannot dissect {len(ip)}-byte IP packet")
    try:
        off, proto, first = _l4_offset(ip)
    except HeaderTooShort:
        off, proto, first = len(ip), ip[9] if version == 4 else ip[6], False
    seg = ip[off:]
    thl = _transport_header_len(proto, seg) if first else 0
    sport = dport = 0
    if first and _has_ports(proto) and len(seg) >= 4:
        sport, dport = struct.unpack_from("!HH", seg, 0)
    key = FiveTuple(_canonical(src), _canonical(dst), sport, dport, proto)
    return PacketRecord(arrival_time, key, bytes(ip[: off + thl]), bytes(seg[thl:]), wire,
                        ETH_IPV4 if version == 4 else ETH_IPV6)


# --------------------------------------------------------------------------
# pcap container


def _strip_link(frame: bytes, linktype: int) -> tuple[int, bytes]:
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            return 0, b""
        etype, off = struct.unpack_from("!H", frame, 12)[0], 14
        while etype in _ETH_VLAN and len(frame) >= off + 4:
            etype, off = struct.unpack_from("!H", frame, off + 2)[0], off + 4
        return etype, frame[off:]
    if linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            return 0, b""
        return struct.unpack_from("!H", frame, 14)[0], frame[16:]
    if linktype == LINKTYPE_LINUX_SLL2:
        if len(frame) < 20:
            return 0, b""
        return struct.unpack_from("!H", frame, 0)[0], frame[20:]
    if linktype in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6):
        if not frame:
            return 0, b""
        return (ETH_IPV4 if frame[0] >> 4 == 4 else ETH_IPV6 if frame[0] >> 4 == 6 else 0), frame
    raise UnsupportedLinkType(f"link type {linktype}")


def _read_all(stream: bytes | bytearray | BinaryIO | str | Path) -> bytes:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        return bytes(stream)
    if isinstance(stream, (str, Path)):
        return Path(stream).read_bytes()
    return stream.read()


def parse_capture(stream: bytes | BinaryIO | str | Path) -> list[PacketRecord]:
    """Parse a classic pcap into records in file order.

    Accepts both byte orders and the microsecond and nanosecond magic
    numbers; timestamps are converted to integer microseconds.  Non-IP frames
    are returned as candidates with ``tuple=None``.
    """
    buf = _read_all(stream)
    if len(buf) < 24:
        raise MalformedGlobalHeader(f"need 24 header bytes, got {len(buf)}")
    for endian in ("<", ">"):
        magic = struct.unpack_from(endian + "I", buf, 0)[0]
        if magic in (_MAGIC_US, _MAGIC_NS):
            break
    else:
        raise MalformedGlobalHeader(f"bad magic {buf[:4].hex()}")
    nanos = magic == _MAGIC_NS
    linktype = struct.unpack_from(endian + "I", buf, 20)[0] & 0x0FFFFFFF
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_LINUX_SLL, LINKTYPE_LINUX_SLL2,
                        LINKTYPE_IPV4, LINKTYPE_IPV6):
        raise UnsupportedLinkType(f"link type {linktype}")
    rec = struct.Struct(endian + "IIII")
    out: list[PacketRecord] = []
    pos = 24
    while pos < len(buf):
        if len(buf) - pos < 16:
            raise TruncatedRecord(f"record header at offset {pos} truncated")
        sec, frac, incl, _orig = rec.unpack_from(buf, pos)
        pos += 16
        if incl > len(buf) - pos:
            raise TruncatedRecord(f"record at offset {pos - 16} claims {incl} bytes, "
                                  f"{len(buf) - pos} remain")
        frame = buf[pos:pos + incl]
        pos += incl
        ts = sec * 1_000_000 + (frac // 1000 if nanos else frac)
        etype, l3 = _strip_link(frame, linktype)
        if etype in (ETH_IPV4, ETH_IPV6) and l3:
            try:
                out.append(dissect_ip(l3, ts))
                continue
            except HeaderTooShort:
                pass
        out.append(PacketRecord(ts, None, b"", bytes(l3), len(l3), etype))
    return out


def write_capture(frames: Iterable[tuple[int, bytes]], linktype: int = LINKTYPE_ETHERNET,
                  nanos: bool = False, big_endian: bool = False, snaplen: int = 65535) -> bytes:
    """Serialize ``(timestamp_us, frame)`` pairs as a classic pcap file."""
    e = ">" if big_endian else "<"
    parts = [struct.pack(e + "IHHiIII", _MAGIC_NS if nanos else _MAGIC_US, 2, 4, 0, 0, snaplen, linktype)]
    for ts, frame in frames:
        sec, us = divmod(int(ts), 1_000_000)
        parts.append(struct.pack(e + "IIII", sec, us * 1000 if nanos else us, len(frame), len(frame)))
        parts.append(bytes(frame))
    return b"".join(parts)


# --------------------------------------------------------------------------
# filtering and anonymization


def filter_non_ip(records: Iterable[PacketRecord], exclude_dhcp: bool = True) -> list[PacketRecord]:
    """Keep only IPv4/IPv6 records, preserving order.

    DHCP (UDP 67/68) is dropped as well when ``exclude_dhcp`` is set.
    """
    kept = []
    for r in records:
        if r.tuple is None or r.link_proto not in (ETH_IPV4, ETH_IPV6):
            continue
        if exclude_dhcp and r.tuple.protocol == PROTO_UDP and {r.tuple.src_port, r.tuple.dst_port} <= {67, 68}:
            continue
        kept.append(r)
    return kept


def anonymize(record: PacketRecord) -> PacketRecord:
    """Zero the address and port bytes inside ``header_bytes``.

    Checksums are left as they are. The out-of-band tuple is kept.
    """
    hdr = bytearray(record.header_bytes)
    off, proto, first = _l4_offset(bytes(hdr))
    if hdr[0] >> 4 == 4:
        hdr[12:20] = bytes(8)
    else:
        hdr[8:40] = bytes(32)
    if first and _has_ports(proto):
        end = min(off + 4, len(hdr))  # snaplen may cut the port fields
        hdr[off:end] = bytes(end - off)
    return replace(record, header_bytes=bytes(hdr))


def read_packets(source: bytes | BinaryIO | str | Path) -> list[PacketRecord]:
    """parse -> filter_non_ip -> anonymize; records sorted by arrival time.

    Records whose IP header is cut short by the capture snaplen cannot be
    anonymized and are dropped.
    """
    recs = []
    for r in filter_non_ip(parse_capture(source)):
        try:
            recs.append(anonymize(r))
        except HeaderTooShort:
            continue
    recs.sort(key=lambda r: r.arrival_time)  # stable: file order breaks ties
    return recs
