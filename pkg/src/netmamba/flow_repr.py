"""Turn packet records into model-ready multimodal flow samples.

A flow is the ordered list of packets sharing one directed 5-tuple.  Each
sample carries the header/payload byte array of the first ``M_b`` packets
(cut into fixed-width strides) plus the clamped size and normalized
inter-arrival sequences of the first ``M_seq`` packets.
"""

from __future__ import annotations

import base64
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyFlow, IndivisibleLength, NegativeInterval
from .packet_io import FiveTuple, PacketRecord


@dataclass(frozen=True)
class ReprConfig:
    M_b: int = 5
    N_h: int = 80
    N_p: int = 240
    L_s: int = 4
    M_seq: int = 20
    mtu: int = 1500

    def __post_init__(self):
        if min(self.M_b, self.N_h + self.N_p, self.L_s, self.M_seq, self.mtu) <= 0:
            raise ValueError(f"non-positive field in {self}")
        if self.byte_len % self.L_s:
            raise IndivisibleLength(f"L_b={self.byte_len} not divisible by L_s={self.L_s}")
        if self.M_seq <= self.M_b:
            raise ValueError(f"M_seq ({self.M_seq}) must exceed M_b ({self.M_b})")

    @property
    def packet_len(self) -> int:
        return self.N_h + self.N_p

    @property
    def byte_len(self) -> int:
        return self.M_b * self.packet_len

    @property
    def n_stride(self) -> int:
        return self.byte_len // self.L_s


@dataclass
class FlowSample:
    key: FiveTuple
    byte_array: np.ndarray  # uint8, (L_b,)
    size_seq: np.ndarray  # int64, (M_seq,)
    interval_seq: np.ndarray  # float64, (M_seq,)
    first_ts: int
    label: int | None = None
    L_s: int = field(default=4, repr=False)

    @property
    def strides(self) -> np.ndarray:
        return cut_strides(self.byte_array, self.L_s)

    def to_json(self) -> dict:
        return {
            "key": self.key.to_json(),
            "byte_array": base64.b64encode(self.byte_array.tobytes()).decode("ascii"),
            "size_seq": [int(v) for v in self.size_seq],
            "interval_seq": [float(v) for v in self.interval_seq],
            "first_ts": int(self.first_ts),
            "label": None if self.label is None else int(self.label),
        }

    @classmethod
    def from_json(cls, obj: dict, L_s: int = 4) -> "FlowSample":
        return cls(
            key=FiveTuple.from_json(obj["key"]),
            byte_array=np.frombuffer(base64.b64decode(obj["byte_array"]), dtype=np.uint8).copy(),
            size_seq=np.asarray(obj["size_seq"], dtype=np.int64),
            interval_seq=np.asarray(obj["interval_seq"], dtype=np.float64),
            first_ts=int(obj["first_ts"]),
            label=obj.get("label"),
            L_s=L_s,
        )


def split_flows(records: Iterable[PacketRecord]) -> "OrderedDict[FiveTuple, list[PacketRecord]]":
    """Group records by exact directed 5-tuple, in first-seen order."""
    flows: OrderedDict[FiveTuple, list[PacketRecord]] = OrderedDict()
    for r in records:
        flows.setdefault(r.tuple, []).append(r)
    return flows


def _fit(data: bytes, n: int) -> bytes:
    return data[:n] if len(data) >= n else data + bytes(n - len(data))


def crop_pad_packet(p: PacketRecord, cfg: ReprConfig) -> bytes:
    return _fit(p.header_bytes, cfg.N_h) + _fit(p.payload_bytes, cfg.N_p)


def build_byte_array(flow: Sequence[PacketRecord], cfg: ReprConfig) -> np.ndarray:
    if not flow:
        raise EmptyFlow("flow has no packets")
    blocks = b"".join(crop_pad_packet(p, cfg) for p in flow[: cfg.M_b])
    return np.frombuffer(_fit(blocks, cfg.byte_len), dtype=np.uint8).copy()


def cut_strides(byte_array: np.ndarray, L_s: int) -> np.ndarray:
    byte_array = np.asarray(byte_array)
    if byte_array.shape[-1] % L_s:
        raise IndivisibleLength(f"length {byte_array.shape[-1]} not divisible by {L_s}")
    return byte_array.reshape(*byte_array.shape[:-1], -1, L_s)


def clamp_size(x: int, mtu: int = 1500) -> int:
    return min(int(x), mtu)


def normalize_interval(x):
    """Map an inter-arrival time in seconds to [0.5, 1) via (1+x)/(2+x).

    Works elementwise on arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise NegativeInterval(f"negative interval {x.min()}")
    out = (1.0 + x) / (2.0 + x)
    return float(out) if out.ndim == 0 else out


def sequences_from_raw(sizes: Sequence[int], times_us: Sequence[int], cfg: ReprConfig) -> tuple[np.ndarray, np.ndarray]:
    """Build padded size/interval sequences from raw wire lengths and arrival times."""
    n = min(len(sizes), cfg.M_seq)
    size_seq = np.zeros(cfg.M_seq, dtype=np.int64)
    interval_seq = np.zeros(cfg.M_seq, dtype=np.float64)
    size_seq[:n] = np.minimum(np.asarray(sizes[:n], dtype=np.int64), cfg.mtu)
    t = np.asarray(times_us[:n], dtype=np.int64)
    gaps = np.diff(t, prepend=t[:1]) / 1e6
    interval_seq[:n] = normalize_interval(gaps) if n > 1 else 0.5
    return size_seq, interval_seq


def extract_sequences(flow: Sequence[PacketRecord], cfg: ReprConfig) -> tuple[np.ndarray, np.ndarray]:
    if not flow:
        raise EmptyFlow("flow has no packets")
    head = flow[: cfg.M_seq]
    return sequences_from_raw([p.wire_length for p in head], [p.arrival_time for p in head], cfg)


def make_sample(key: FiveTuple, flow: Sequence[PacketRecord], cfg: ReprConfig,
                label: int | None = None) -> FlowSample:
    size_seq, interval_seq = extract_sequences(flow, cfg)
    return FlowSample(key, build_byte_array(flow, cfg), size_seq, interval_seq,
                      flow[0].arrival_time, label, cfg.L_s)


def extract_samples(records: Iterable[PacketRecord], cfg: ReprConfig | None = None,
                    label: int | None = None, min_packets: int = 1) -> list[FlowSample]:
    """Flow splitting followed by per-flow sample construction."""
    cfg = cfg or ReprConfig()
    return [make_sample(k, f, cfg, label) for k, f in split_flows(records).items() if len(f) >= min_packets]


# --------------------------------------------------------------------------
# persistence: one JSON object per line


def dumps_sample(s: FlowSample) -> str:
    return json.dumps(s.to_json(), separators=(",", ":"))


def save_samples(samples: Iterable[FlowSample], path: str | Path, header: dict | None = None) -> None:
    """One sample per line; an optional first line ``{"header": ...}`` records provenance."""
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True, separators=(",", ":")) + "\n")
        for s in samples:
            fh.write(dumps_sample(s) + "\n")


def iter_samples(path: str | Path, L_s: int = 4) -> Iterator[FlowSample]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                if "header" not in obj:
                    yield FlowSample.from_json(obj, L_s)


def load_samples(path: str | Path, L_s: int = 4) -> list[FlowSample]:
    return list(iter_samples(path, L_s))


def read_header(path: str | Path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    obj = json.loads(first) if first.strip() else {}
    return obj.get("header")


def stack_samples(samples: Sequence[FlowSample]) -> dict[str, np.ndarray]:
    """Batch arrays: strides (B, n_stride, L_s) uint8, sizes, intervals, labels."""
    return {
        "strides": np.stack([s.strides for s in samples]),
        "sizes": np.stack([s.size_seq for s in samples]),
        "intervals": np.stack([s.interval_seq for s in samples]),
        "labels": np.array([-1 if s.label is None else s.label for s in samples], dtype=np.int64),
    }
