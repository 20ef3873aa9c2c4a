"""Online classification engine driven by a simulated packet clock.

Packets are ingested into a flow table owned by one task.  Every W_g
seconds of capture time the table is traversed: entries holding at least
M_b packets become FlowSamples and move into a single-slot mailbox, and
entries older than W_r are dropped.  A consumer drains the mailbox, runs
the classifier on the whole pending batch and appends one record per flow
to a JSONL result store, which a small HTTP endpoint can query.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Iterable, Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from .errors import EmptyMailbox, MailboxBusy, NotFound
from .flow_repr import FlowSample, ReprConfig, crop_pad_packet, sequences_from_raw, stack_samples
from .packet_io import FiveTuple, PacketRecord, read_packets
from .tensor import no_grad

log = logging.getLogger(__name__)

US = 1_000_000


@dataclass
class FlowTableEntry:
    key: FiveTuple
    created_at: int
    byte_buffer: bytearray = field(default_factory=bytearray)
    size_buffer: list[int] = field(default_factory=list)
    time_buffer: list[int] = field(default_factory=list)
    packet_count: int = 0
    wire_bits: int = 0


class FlowTable(dict):
    """FiveTuple -> FlowTableEntry, owned by a single task."""


def ingest_packet(table: FlowTable, p: PacketRecord, now: int, cfg: ReprConfig) -> FlowTableEntry:
    entry = table.get(p.tuple)
    if entry is None:
        entry = table[p.tuple] = FlowTableEntry(p.tuple, now)
    if entry.packet_count < cfg.M_b:
        entry.byte_buffer += crop_pad_packet(p, cfg)
    if entry.packet_count < cfg.M_seq:
        entry.size_buffer.append(p.wire_length)
        entry.time_buffer.append(p.arrival_time)
    entry.packet_count += 1
    entry.wire_bits += 8 * p.wire_length
    return entry


def entry_to_sample(entry: FlowTableEntry, cfg: ReprConfig) -> FlowSample:
    sizes, ints = sequences_from_raw(entry.size_buffer, entry.time_buffer, cfg)
    data = np.frombuffer(bytes(entry.byte_buffer[: cfg.byte_len]), dtype=np.uint8).copy()
    return FlowSample(entry.key, data, sizes, ints, entry.time_buffer[0], None, cfg.L_s)


@dataclass
class PendingSample:
    sample: FlowSample
    n_packets: int
    wire_bits: int
    flushed_at: int  # engine clock
    flushed_wall: float


class BatchMailbox:
    """Single-slot hand-off between the table task and the classifier.

    The producer writes samples and sets ``status`` last; the consumer
    clears ``status`` first and then takes the samples.  A put while a
    batch is still pending merges into it.
    """

    def __init__(self):
        self._lock = threading.Condition()
        self.samples: list[PendingSample] = []
        self.status = 0
        self.merges = 0

    @property
    def sample_size(self) -> int:
        return len(self.samples)

    def put(self, items: Sequence[PendingSample], merge: bool = True) -> None:
        if not items:
            return
        with self._lock:
            if self.status == 1:
                if not merge:
                    raise MailboxBusy("previous batch has not been consumed")
                self.merges += 1
            self.samples.extend(items)
            self.status = 1
            self._lock.notify_all()

    def take(self, wait: float | None = None) -> list[PendingSample]:
        with self._lock:
            if self.status == 0 and wait is not None:
                self._lock.wait_for(lambda: self.status == 1, timeout=wait)
            if self.status == 0:
                raise EmptyMailbox("no pending batch")
            self.status = 0
            items, self.samples = self.samples, []
            return items


def flush_pending(table: FlowTable, mailbox: BatchMailbox, now: int, cfg: ReprConfig) -> list[PendingSample]:
    ready = [k for k, e in table.items() if e.packet_count >= cfg.M_b]
    items = []
    wall = time.perf_counter()
    for k in ready:
        e = table.pop(k)
        items.append(PendingSample(entry_to_sample(e, cfg), e.packet_count, e.wire_bits, now, wall))
    mailbox.put(items)
    return items


def flush(table: FlowTable, mailbox: BatchMailbox, now: int, cfg: ReprConfig) -> list[FlowSample]:
    """Move every entry with at least M_b packets into the mailbox."""
    return [it.sample for it in flush_pending(table, mailbox, now, cfg)]


def evict(table: FlowTable, now: int, W_r: float) -> list[FiveTuple]:
    """Drop entries whose age reached W_r seconds."""
    old = [k for k, e in table.items() if now - e.created_at >= W_r * US]
    for k in old:
        del table[k]
    return old


@dataclass
class ClassifiedFlow:
    key: FiveTuple
    label: int
    score: float
    classified_at: int
    batch_id: int
    n_packets: int = 0

    def to_json(self) -> dict:
        return {"key": self.key.to_json(), "label": self.label, "score": self.score,
                "classified_at": self.classified_at, "batch_id": self.batch_id, "n_packets": self.n_packets}

    @classmethod
    def from_json(cls, obj: dict) -> "ClassifiedFlow":
        return cls(FiveTuple.from_json(obj["key"]), int(obj["label"]), float(obj["score"]),
                   int(obj["classified_at"]), int(obj["batch_id"]), int(obj.get("n_packets", 0)))


def classify_samples(model, samples: Sequence[FlowSample]) -> np.ndarray:
    """Logits for each sample, computed one sample at a time.

    Per-sample evaluation keeps every flow's logits independent of which
    other flows happened to share its batch, so online and offline runs
    agree bit for bit.
    """
    if not samples:
        return np.zeros((0, model.n_classes))
    data = stack_samples(samples)
    out = []
    with no_grad():
        for i in range(len(samples)):
            out.append(model.logits({k: v[i:i + 1] for k, v in data.items()}).data[0])
    return np.stack(out)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


class ResultStore:
    """Append-only JSONL of ClassifiedFlows with an in-memory index."""

    def __init__(self, path: str | Path | None = None, header: dict | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self.records: list[ClassifiedFlow] = []
        self.latest: dict[FiveTuple, ClassifiedFlow] = {}
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w") as fh:
                if header is not None:
                    fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")

    def append(self, recs: Iterable[ClassifiedFlow]) -> None:
        recs = list(recs)
        with self._lock:
            if self.path is not None:
                with open(self.path, "a") as fh:
                    for r in recs:
                        fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
            for r in recs:
                self.records.append(r)
                self.latest[r.key] = r

    @classmethod
    def load(cls, path: str | Path) -> "ResultStore":
        store = cls()
        with open(path) as fh:
            for line in fh:
                obj = json.loads(line)
                if "header" not in obj:
                    store.append([ClassifiedFlow.from_json(obj)])
        store.path = Path(path)
        return store


def query_results(store: ResultStore, key: FiveTuple | str = "all", offset: int = 0, limit: int = 100):
    """Latest record for a tuple, or a page of all records when key == "all"."""
    if isinstance(key, str):
        if key != "all":
            raise ValueError(f"key must be a FiveTuple or 'all', got {key!r}")
        with store._lock:
            page = store.records[offset:offset + limit]
            total = len(store.records)
        return {"total": total, "offset": offset, "limit": limit, "flows": [r.to_json() for r in page]}
    rec = store.latest.get(key)
    if rec is None:
        raise NotFound(str(key))
    return rec.to_json()


@dataclass
class BatchStat:
    batch_id: int
    n_flows: int
    wire_bits: int
    infer_seconds: float
    latency_seconds: float  # mean wall time from flush to result
    engine_time: int

    @property
    def throughput_mbps(self) -> float:
        return self.wire_bits / max(self.infer_seconds, 1e-12) / 1e6


class OnlineEngine:
    """Flow table, mailbox, classifier consumer and result store wired together."""

    def __init__(self, model, cfg: ReprConfig | None = None, W_g: float = 3.0, W_r: float = 10.0,
                 store: ResultStore | None = None):
        self.model = model
        self.cfg = cfg or ReprConfig()
        self.W_g, self.W_r = W_g, W_r
        self.table = FlowTable()
        self.mailbox = BatchMailbox()
        self.store = store or ResultStore()
        self.stats: list[BatchStat] = []
        self.evicted: list[FiveTuple] = []
        self.eviction_log: list[tuple[FiveTuple, int, int]] = []  # (key, created_at, evicted_at)
        self.logit_log: list[tuple[FiveTuple, np.ndarray]] = []
        self.emitted: list[PendingSample] = []
        self.next_batch = 0
        self.clock = 0

    def ingest(self, p: PacketRecord) -> None:
        self.clock = max(self.clock, p.arrival_time)
        ingest_packet(self.table, p, p.arrival_time, self.cfg)

    def tick(self, now: int) -> None:
        """One W_g traversal: flush ready entries, then evict aged ones."""
        self.clock = now
        self.emitted.extend(flush_pending(self.table, self.mailbox, now, self.cfg))
        created = {k: e.created_at for k, e in self.table.items()}
        gone = evict(self.table, now, self.W_r)
        self.evicted.extend(gone)
        self.eviction_log.extend((k, created[k], now) for k in gone)

    def consume_and_classify(self, wait: float | None = None) -> list[ClassifiedFlow]:
        items = self.mailbox.take(wait)
        batch_id = self.next_batch
        self.next_batch += 1
        t0 = time.perf_counter()
        logits = classify_samples(self.model, [it.sample for it in items])
        t1 = time.perf_counter()
        probs = _softmax(logits.astype(np.float64))
        now = max(it.flushed_at for it in items)
        out = [ClassifiedFlow(it.sample.key, int(np.argmax(probs[i])), float(probs[i].max()), now, batch_id,
                              it.n_packets) for i, it in enumerate(items)]
        self.store.append(out)
        self.stats.append(BatchStat(batch_id, len(items), sum(it.wire_bits for it in items), t1 - t0,
                                    float(np.mean([t1 - it.flushed_wall for it in items])), now))
        self.logit_log.extend((it.sample.key, logits[i]) for i, it in enumerate(items))
        return out


@dataclass
class ReplayReport:
    results: list[ClassifiedFlow]
    stats: list[BatchStat]
    evicted: list[FiveTuple]
    emitted: list[PendingSample]
    capture_seconds: float
    simulated_wall_seconds: float
    n_packets: int
    logits: list = field(default_factory=list)  # (key, logits) per classified flow
    eviction_log: list = field(default_factory=list)

    def summary(self) -> dict:
        tp = [s.throughput_mbps for s in self.stats]
        lat = [s.latency_seconds for s in self.stats]
        return {"batches": len(self.stats), "flows_classified": len(self.results), "evicted": len(self.evicted),
                "packets": self.n_packets, "capture_seconds": self.capture_seconds,
                "simulated_wall_seconds": self.simulated_wall_seconds,
                "throughput_mbps_mean": float(np.mean(tp)) if tp else 0.0,
                "latency_seconds_mean": float(np.mean(lat)) if lat else 0.0}


def replay(source, model, cfg: ReprConfig | None = None, W_g: float = 3.0, W_r: float = 10.0,
           speed_factor: float = 1.0, store: ResultStore | None = None, threaded: bool = False) -> ReplayReport:
    """Drive the engine from a capture on a clock taken from packet timestamps.

    Ticks fall every W_g seconds from the first packet; after the last
    packet the clock keeps ticking until the table is empty.  ``speed_factor``
    only rescales the reported wall duration; flushes, evictions and
    classifications depend on capture time alone.
    """
    records = source if isinstance(source, list) else read_packets(source)
    eng = OnlineEngine(model, cfg, W_g, W_r, store)
    step = int(round(W_g * US))
    if threaded:
        _run_threaded(eng, records, step)
    else:
        _run_inline(eng, records, step)
    span = (records[-1].arrival_time - records[0].arrival_time) / US if records else 0.0
    return ReplayReport(eng.store.records[:], eng.stats, eng.evicted, eng.emitted, span,
                        span / speed_factor, len(records), logits=eng.logit_log,
                        eviction_log=eng.eviction_log)


def _ticks(records: Sequence[PacketRecord], step: int):
    """Yield ('pkt', record) and ('tick', time) events in clock order."""
    if not records:
        return
    next_tick = records[0].arrival_time + step
    for p in records:
        while p.arrival_time >= next_tick:
            yield "tick", next_tick
            next_tick += step
        yield "pkt", p
    yield "drain", next_tick


def _run_inline(eng: OnlineEngine, records, step: int) -> None:
    for kind, ev in _ticks(records, step):
        if kind == "pkt":
            eng.ingest(ev)
            continue
        now = ev
        while True:
            eng.tick(now)
            if eng.mailbox.status:
                eng.consume_and_classify()
            if kind == "tick" or not eng.table:
                break
            now += step


def _run_threaded(eng: OnlineEngine, records, step: int) -> None:
    """Feeder -> table owner -> classifier, joined by two single-producer channels."""
    packets: queue.Queue = queue.Queue(maxsize=4096)
    done = threading.Event()
    errors: list[BaseException] = []

    def feeder():
        for item in _ticks(records, step):
            packets.put(item)
        packets.put(None)

    def owner():
        try:
            while (item := packets.get()) is not None:
                kind, ev = item
                if kind == "pkt":
                    eng.ingest(ev)
                    continue
                now = ev
                while True:
                    eng.tick(now)
                    if kind == "tick" or not eng.table:
                        break
                    now += step
        except BaseException as exc:  # surfaced to the caller below
            errors.append(exc)
        finally:
            done.set()

    def consumer():
        try:
            while not (done.is_set() and eng.mailbox.status == 0):
                try:
                    eng.consume_and_classify(wait=0.05)
                except EmptyMailbox:
                    pass
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=f, daemon=True) for f in (feeder, owner, consumer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


def cdf_rows(values: Sequence[float]) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return [(float(x), (i + 1) / len(v)) for i, x in enumerate(v)]


# --------------------------------------------------------------------------
# HTTP query endpoint


def make_server(store: ResultStore, stats: Callable[[], dict] | None = None, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    """GET /flows?src=&dst=&sport=&dport=&proto=, /flows/all?offset=&limit=, /stats."""

    class Handler(BaseHTTPRequestHandler):
        def _send(self, code: int, obj) -> None:
            body = json.dumps(obj, sort_keys=True).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):  # noqa: N802 - http.server naming
            url = urlparse(self.path)
            q = {k: v[0] for k, v in parse_qs(url.query).items()}
            try:
                if url.path == "/flows/all":
                    self._send(200, query_results(store, "all", int(q.get("offset", 0)), int(q.get("limit", 100))))
                elif url.path == "/flows":
                    key = FiveTuple.from_strings(q["src"], q["dst"], int(q["sport"]), int(q["dport"]),
                                                 int(q["proto"]))
                    self._send(200, query_results(store, key))
                elif url.path == "/stats":
                    self._send(200, stats() if stats else {})
                else:
                    self._send(404, {"error": "unknown path", "path": url.path})
            except NotFound as exc:
                self._send(404, {"error": "not found", "key": str(exc)})
            except (KeyError, ValueError) as exc:
                self._send(400, {"error": "bad query", "detail": str(exc)})

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

    return ThreadingHTTPServer((host, port), Handler)
