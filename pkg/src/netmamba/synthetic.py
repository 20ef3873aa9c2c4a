"""Synthetic labeled traffic built from real crafted packets.

Every class has a byte template for the payload of each packet position,
a typical payload-length pattern and a typical inter-arrival gap.  Flows
are sampled around these signatures with byte-level noise, written as an
Ethernet pcap and read back through the normal capture pipeline, so the
resulting FlowSamples exercise parsing, anonymization and representation
exactly as real captures would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .craft import ethernet_frame, ipv4_packet, tcp_segment, udp_datagram
from .flow_repr import FlowSample, ReprConfig, extract_samples
from .packet_io import read_packets, write_capture


@dataclass(frozen=True)
class ClassSignature:
    templates: np.ndarray  # (n_packets, max_payload) uint8
    lengths: np.ndarray  # (n_packets,) typical payload length per packet position
    gap_us: float  # typical inter-arrival gap
    proto: int = 6


def make_signatures(n_classes: int, seed: int = 0, n_packets: int = 20, max_payload: int = 240,
                    distinctness: float = 1.0, shared_layout: bool = False) -> list[ClassSignature]:
    """Class signatures; ``distinctness`` is the fraction of template bytes unique to a class.

    With distinctness < 1 the remaining byte positions share one common
    template, which makes the classes overlap.  ``shared_layout`` also gives
    every class the same lengths, gap and protocol, so only the unique
    payload bytes tell them apart.
    """
    rng = np.random.default_rng(seed)
    common = rng.integers(0, 256, (n_packets, max_payload), dtype=np.uint8)
    own = rng.random((n_packets, max_payload)) < distinctness
    common_lengths = rng.integers(40, max_payload + 1, n_packets)
    common_gap = float(10 ** rng.uniform(3, 5.5))
    sigs = []
    for c in range(n_classes):
        t = np.where(own, rng.integers(0, 256, (n_packets, max_payload), dtype=np.uint8), common)
        lengths = rng.integers(40, max_payload + 1, n_packets)
        gap = float(10 ** rng.uniform(3, 5.5))
        if shared_layout:
            sigs.append(ClassSignature(t.astype(np.uint8), common_lengths, common_gap, 6))
        else:
            sigs.append(ClassSignature(t.astype(np.uint8), lengths, gap, 6 if c % 2 == 0 else 17))
    return sigs


def _flow_frames(sig: ClassSignature, flow_id: int, n_pkts: int, t0: int, rng: np.random.Generator,
                 noise: float, length_jitter: int) -> list[tuple[int, bytes]]:
    src = f"10.{(flow_id >> 16) & 255}.{(flow_id >> 8) & 255}.{flow_id & 255}"
    dst = "192.0.2.10"
    sport, dport = 1024 + flow_id % 60000, 443
    frames = []
    t = t0
    seq = int(rng.integers(0, 2**31))
    for i in range(n_pkts):
        k = min(i, len(sig.lengths) - 1)
        n = int(np.clip(sig.lengths[k] + rng.integers(-length_jitter, length_jitter + 1), 1, sig.templates.shape[1]))
        body = sig.templates[k, :n].copy()
        flip = rng.random(n) < noise
        body[flip] = rng.integers(0, 256, int(flip.sum()), dtype=np.uint8)
        if sig.proto == 6:
            seg = tcp_segment(sport, dport, body.tobytes(), seq=seq)
            seq = (seq + n) % 2**32
        else:
            seg = udp_datagram(sport, dport, body.tobytes())
        frames.append((t, ethernet_frame(ipv4_packet(src, dst, sig.proto, seg, ident=i))))
        t += max(1, int(rng.lognormal(np.log(sig.gap_us), 0.25)))
    return frames


def synthetic_capture(counts: dict[int, int] | list[int], seed: int = 0, packets_per_flow: int = 8,
                      noise: float = 0.1, distinctness: float = 1.0, length_jitter: int = 8,
                      signatures: list[ClassSignature] | None = None, start_us: int = 1_700_000_000_000_000,
                      spacing_us: int = 50_000) -> tuple[bytes, dict]:
    """A pcap holding ``counts[c]`` flows of class c, plus {FiveTuple-ish key: label}.

    The label map is keyed by the flow's source address string, which is
    unique per flow before anonymization.
    """
    counts = dict(enumerate(counts)) if isinstance(counts, list) else dict(counts)
    n_classes = max(counts) + 1 if counts else 0
    sigs = signatures or make_signatures(n_classes, seed, distinctness=distinctness)
    rng = np.random.default_rng([seed, 1])
    labels = np.concatenate([np.full(n, c) for c, n in sorted(counts.items())]).astype(int)
    rng.shuffle(labels)
    frames: list[tuple[int, bytes]] = []
    label_of = {}
    for fid, c in enumerate(labels):
        t0 = start_us + fid * spacing_us
        ff = _flow_frames(sigs[c], fid + 1, packets_per_flow, t0, rng, noise, length_jitter)
        frames.extend(ff)
        label_of[f"10.{((fid + 1) >> 16) & 255}.{((fid + 1) >> 8) & 255}.{(fid + 1) & 255}"] = int(c)
    frames.sort(key=lambda f: f[0])
    return write_capture(frames), label_of


def synthetic_samples(counts: dict[int, int] | list[int], seed: int = 0, cfg: ReprConfig | None = None,
                      **kw) -> list[FlowSample]:
    """Labeled FlowSamples from a synthetic capture, in first-packet order."""
    cfg = cfg or ReprConfig()
    pcap, label_of = synthetic_capture(counts, seed, **kw)
    samples = extract_samples(read_packets(pcap), cfg)
    for s in samples:
        s.label = label_of[s.key.src]
    return samples
