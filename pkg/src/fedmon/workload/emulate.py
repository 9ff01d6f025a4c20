"""Run an emulated infrastructure against the broker and/or the store."""

from __future__ import annotations

import hashlib
import heapq
import logging
import queue
import threading
import time
import uuid
from collections import defaultdict
from dataclasses import dataclass, field

from ..broker import Broker, BrokerClient
from ..core import Message, RoutingKey, parse_pattern
from ..store import HybridStore, QueryFilter
from ..xform.sources import EPOCH_BASE, seeded_rng
from .generators import DocumentFactory, build_topology, schedule
from .matrix import SubscriberRole, build_subscription_matrix, expected_fanout, fanout
from .profiles import InfrastructureProfile
from .rates import expected_publish_rate

log = logging.getLogger(__name__)

BACKENDS = ("broker", "store", "both")
MIB = float(1 << 20)
SELECT_PERIOD = 60.0
STORE_WRITERS = 16
# in "both" mode one extra subscriber feeds every message to the store
STORE_INGEST_ROLE = SubscriberRole("store_ingest", (parse_pattern("#"),))
# in-process virtual runs pause publishing while this many messages are queued
_DEPTH_HIGH, _DEPTH_LOW = 20_000, 2_000


class EmulationError(RuntimeError):
    pass


# -- clocks


class VirtualClock:
    """Emulated time advances instantly to each event."""

    name = "virtual"

    def __init__(self):
        self.t = 0.0

    def now(self) -> float:
        return self.t

    def wait_until(self, t: float) -> None:
        if t < self.t:
            raise EmulationError(f"clock went backwards: {t} < {self.t}")
        self.t = t


class WallClock:
    name = "wall"

    def __init__(self, speed: float = 1.0, source=time.monotonic):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.speed = speed
        self.source = source
        self.start = source()
        self._last = 0.0

    def now(self) -> float:
        n = (self.source() - self.start) * self.speed
        if n < self._last:
            raise EmulationError(f"clock went backwards: {n} < {self._last}")
        self._last = n
        return n

    def wait_until(self, t: float) -> None:
        delay = (t - self.now()) / self.speed
        if delay > 0:
            time.sleep(delay)


def make_clock(kind: str, speed: float = 1.0):
    if kind == "virtual":
        return VirtualClock()
    if kind == "wall":
        return WallClock(speed)
    raise ValueError(f"unknown clock {kind!r}")


# -- report


@dataclass
class SourceRow:
    published: int = 0
    published_bytes: int = 0
    publish_seconds: float = 0.0
    consumed: int = 0
    consumed_bytes: int = 0

    def add(self, other: "SourceRow") -> None:
        self.published += other.published
        self.published_bytes += other.published_bytes
        self.publish_seconds += other.publish_seconds
        self.consumed += other.consumed
        self.consumed_bytes += other.consumed_bytes

    def columns(self, duration: float) -> dict:
        per = (lambda x: x / duration) if duration > 0 else (lambda x: 0.0)
        return {
            "Average Publish Time (msec)":
                1000 * self.publish_seconds / self.published if self.published else 0.0,
            "Average Message Size (bytes)":
                self.published_bytes / self.published if self.published else 0.0,
            "Published Throughput (msg/sec)": per(self.published),
            "Published Bandwidth (MB/sec)": per(self.published_bytes) / MIB,
            "Consumed Throughput (msg/sec)": per(self.consumed),
            "Consumed Bandwidth (MB/sec)": per(self.consumed_bytes) / MIB,
        }


@dataclass
class StoreSummary:
    updates: int = 0
    update_bytes: int = 0
    update_seconds: float = 0.0
    selects: int = 0
    select_seconds: float = 0.0
    records: int = 0

    def columns(self, duration: float) -> dict:
        per = (lambda x: x / duration) if duration > 0 else (lambda x: 0.0)
        return {
            "Average Update Time (msec)":
                1000 * self.update_seconds / self.updates if self.updates else 0.0,
            "Average Update Size (bytes)": self.update_bytes / self.updates if self.updates else 0.0,
            "Throughput (updates/sec)": per(self.updates),
            "Bandwidth (MB/sec)": per(self.update_bytes) / MIB,
            "Consumed Throughput (selects/sec)": per(self.selects),
        }


@dataclass
class EmulationReport:
    profile: str
    backend: str
    duration: float
    seed: int
    clock: str
    sources: dict = field(default_factory=dict)
    expected_rate: float = 0.0
    delivered_count: int = 0
    drop_count: int = 0
    fanout_oracle: float = 0.0
    fanout_expected: float = 0.0
    sequence_digest: str = ""
    wall_seconds: float = 0.0
    store: StoreSummary | None = None
    store_handle: HybridStore | None = field(default=None, repr=False, compare=False)

    @property
    def total(self) -> SourceRow:
        t = SourceRow()
        for row in self.sources.values():
            t.add(row)
        return t

    @property
    def published_rate(self) -> float:
        return self.total.published / self.duration if self.duration > 0 else 0.0

    @property
    def mean_message_bytes(self) -> float:
        t = self.total
        return t.published_bytes / t.published if t.published else 0.0

    @property
    def fanout_measured(self) -> float:
        """Broker copies enqueued per published message."""
        pub = self.total.published
        return self.delivered_count / pub if pub else 0.0

    def rows(self) -> list[dict]:
        """One row per source plus a totals row."""
        out = []
        for name in sorted(self.sources):
            out.append({"Source": name, **self.sources[name].columns(self.duration)})
        out.append({"Source": "total", **self.total.columns(self.duration)})
        return out

    def to_dict(self) -> dict:
        d = {
            "profile": self.profile, "backend": self.backend, "duration": self.duration,
            "seed": self.seed, "clock": self.clock, "wall_seconds": self.wall_seconds,
            "expected_rate": self.expected_rate, "published_rate": self.published_rate,
            "mean_message_bytes": self.mean_message_bytes,
            "published_count": self.total.published,
            "consumed_count": self.total.consumed,
            "delivered_count": self.delivered_count, "drop_count": self.drop_count,
            "fanout_measured": self.fanout_measured, "fanout_oracle": self.fanout_oracle,
            "fanout_expected": self.fanout_expected,
            "sequence_digest": self.sequence_digest,
            "counts": {k: v.__dict__ for k, v in sorted(self.sources.items())},
            "rows": self.rows(),
        }
        if self.store is not None:
            d["store"] = {**self.store.__dict__, **self.store.columns(self.duration)}
        return d


# -- helpers


def doc_class(key: RoutingKey) -> str:
    w = key.words
    if w[0] == "glue2" and len(w) >= 4:
        return "glue2.job" if w[3] == "job" else f"glue2.{w[3]}"
    return w[0]


class _StoreSink:
    """Feeds documents to the store from a pool of writer threads."""

    def __init__(self, store: HybridStore, writers: int = STORE_WRITERS):
        self.store = store
        self.work: queue.Queue = queue.Queue(maxsize=50_000)
        self.summaries = [StoreSummary() for _ in range(writers)]
        self.errors: list[BaseException] = []
        self.threads = [threading.Thread(target=self._run, args=(s,), daemon=True,
                                         name=f"store-writer-{i}")
                        for i, s in enumerate(self.summaries)]
        for t in self.threads:
            t.start()

    def _run(self, summary: StoreSummary) -> None:
        while True:
            item = self.work.get()
            if item is None:
                return
            doc, source, size = item
            t0 = time.perf_counter()
            try:
                self.store.ingest(doc, source)
            except Exception as exc:  # reported after the run
                self.errors.append(exc)
                continue
            summary.update_seconds += time.perf_counter() - t0
            summary.updates += 1
            summary.update_bytes += size

    def submit(self, doc, source: str, size: int) -> None:
        self.work.put((doc, source, size))

    def close(self) -> StoreSummary:
        for _ in self.threads:
            self.work.put(None)
        for t in self.threads:
            t.join()
        if self.errors:
            raise EmulationError(f"store ingest failed: {self.errors[0]!r}")
        total = StoreSummary()
        for s in self.summaries:
            total.updates += s.updates
            total.update_bytes += s.update_bytes
            total.update_seconds += s.update_seconds
        return total


def role_query(role: str, now_epoch: float) -> QueryFilter:
    """What each subscriber role selects once a minute in store mode."""
    since = now_epoch - SELECT_PERIOD
    if role in ("info_database", "web_portal", "store_ingest"):
        return QueryFilter(since=since, limit=1000)
    if role == "accounting":
        return QueryFilter(source="glue2", kind="job.end", since=since)
    if role == "metascheduler":
        return QueryFilter(source="glue2", kind="queue", latest_only=True)
    if role == "monitoring":
        return QueryFilter(source="ganglia", latest_only=True)
    if role == "science_gateway":
        return QueryFilter(source="inca", latest_only=True)
    raise ValueError(f"unknown role {role!r}")


class _Consumer(threading.Thread):
    def __init__(self, queue_name: str, broker: Broker | None, endpoint: str | None,
                 sink: _StoreSink | None = None):
        super().__init__(daemon=True, name=f"sub-{queue_name}")
        self.queue_name = queue_name
        self.rows: dict[str, SourceRow] = defaultdict(SourceRow)
        self.count = 0
        self.stop = threading.Event()
        self.sink = sink
        self.error: BaseException | None = None
        if broker is not None:
            self._consumer = broker.consume(queue_name)
            self._client = None
        else:
            self._client = BrokerClient.connect(endpoint)
            self._client.subscribe(queue_name)
            self._consumer = None

    def _next(self):
        if self._consumer is not None:
            item = self._consumer.get(timeout=0.1)
            if item is None:
                return None
            tag, msg = item
            self._consumer.ack(tag)
            return msg
        d = self._client.get(timeout=0.1)
        if d is None:
            return None
        self._client.ack(d.tag)
        return d.message

    def run(self):
        try:
            while True:
                msg = self._next()
                if msg is None:
                    if self.stop.is_set():
                        return
                    continue
                row = self.rows[doc_class(msg.routing_key)]
                row.consumed += 1
                row.consumed_bytes += msg.payload_size
                self.count += 1
                if self.sink is not None:
                    self.sink.submit(msg.payload, msg.routing_key.words[0], msg.payload_size)
        except BaseException as exc:
            self.error = exc
        finally:
            if self._consumer is not None:
                self._consumer.close()
            if self._client is not None:
                self._client.close()


def _select_events(matrix, duration: float, seed: int):
    rng = seeded_rng(seed, "selects")
    heap = [(rng.uniform(0, SELECT_PERIOD), i) for i in range(len(matrix))]
    heapq.heapify(heap)
    while heap and heap[0][0] < duration:
        t, i = heapq.heappop(heap)
        yield t, i
        heapq.heappush(heap, (t + SELECT_PERIOD, i))


def run_emulation(profile: InfrastructureProfile, duration: float, backend: str = "broker",
                  *, seed: int = 0, clock: str = "wall", speed: float = 1.0,
                  connect: str | None = None, exchange: str = "monitor",
                  broker: Broker | None = None, store: HybridStore | None = None,
                  drain_timeout: float = 120.0) -> EmulationReport:
    """Emulate ``profile`` for ``duration`` seconds of (wall or virtual) time.

    ``connect`` points the publishers and subscribers at a remote broker
    (``host:port``); otherwise an embedded broker is used.
    """
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if duration < 0:
        raise ValueError("duration must be >= 0")
    started = time.perf_counter()
    clk = make_clock(clock, speed)
    report = EmulationReport(profile.name, backend, float(duration), seed, clk.name,
                             expected_rate=expected_publish_rate(profile))
    use_broker = backend in ("broker", "both")
    use_store = backend in ("store", "both")
    extra = (STORE_INGEST_ROLE,) if backend == "both" else ()
    matrix = build_subscription_matrix(profile, extra)
    report.fanout_expected = expected_fanout(profile, matrix) if use_broker else 0.0

    store = store if store is not None else (HybridStore() if use_store else None)
    sink = _StoreSink(store) if use_store else None

    # broker topology
    pub_client = None
    embedded = None
    run_id = uuid.uuid4().hex[:8]
    qname = {s.queue: s.queue for s in matrix}
    consumers: list[_Consumer] = []
    if use_broker:
        if connect:
            qname = {s.queue: f"emu-{run_id}.{s.queue}" for s in matrix}
            try:
                pub_client = BrokerClient.connect(connect)
            except OSError as exc:
                raise EmulationError(f"broker {connect} unreachable: {exc}") from None
            pub_client.declare_exchange(exchange)
            target = pub_client
        else:
            embedded = broker or Broker()
            embedded.declare_exchange(exchange)
            target = embedded
        for sub in matrix:
            for p in sub.patterns:
                target.bind(qname[sub.queue], exchange, p)
        for sub in matrix:
            c = _Consumer(qname[sub.queue], embedded, connect,
                          sink if sub.role.name == "store_ingest" else None)
            consumers.append(c)
        before = _queue_counts(embedded, pub_client, qname.values())
        for c in consumers:
            c.start()

    factory = DocumentFactory(profile, seed)
    rows: dict[str, SourceRow] = defaultdict(SourceRow)
    digest = hashlib.sha256()
    fan_cache: dict[str, int] = {}
    oracle_total = 0
    selects = _select_events(matrix, duration, seed) if use_store else iter(())
    next_select = next(selects, None)
    summary_sel = StoreSummary()
    last_t = 0.0
    flush_each = isinstance(clk, WallClock)

    def do_selects(upto: float):
        nonlocal next_select
        while next_select is not None and next_select[0] <= upto:
            t, i = next_select
            clk.wait_until(t)
            flt = role_query(matrix[i].role.name, EPOCH_BASE + t)
            t0 = time.perf_counter()
            store.query(flt)
            summary_sel.select_seconds += time.perf_counter() - t0
            summary_sel.selects += 1
            next_select = next(selects, None)

    try:
        for n, ev in enumerate(schedule(profile, duration, seed, build_topology(profile))):
            if ev.t < last_t:
                raise EmulationError("event schedule went backwards")
            last_t = ev.t
            do_selects(ev.t)
            cls, key, doc = factory.build(ev)
            clk.wait_until(ev.t)
            msg = Message.create(key, doc)
            digest.update(msg.key_text.encode())
            digest.update(msg.body)
            row = rows[cls]
            row.published += 1
            row.published_bytes += msg.payload_size
            t0 = time.perf_counter()
            if use_broker:
                if pub_client is not None:
                    pub_client.publish(exchange, msg, flush=flush_each)
                else:
                    embedded.publish(exchange, msg)
                kt = msg.key_text
                f = fan_cache.get(kt)
                if f is None:
                    f = fan_cache[kt] = fanout(key, matrix)
                oracle_total += f
            else:
                sink.submit(doc, key.words[0], msg.payload_size)
            row.publish_seconds += time.perf_counter() - t0
            if embedded is not None and not flush_each and n % 512 == 0:
                if embedded.total_depth() > _DEPTH_HIGH:
                    while embedded.total_depth() > _DEPTH_LOW:
                        _check_consumers(consumers)
                        time.sleep(0.01)
        do_selects(duration)
        if pub_client is not None:
            pub_client.flush()
        clk.wait_until(max(last_t, duration))

        if use_broker:
            delivered, dropped = _drain(embedded, pub_client, qname.values(), consumers,
                                        before, drain_timeout)
            report.delivered_count = delivered
            report.drop_count = dropped
    finally:
        for c in consumers:
            c.stop.set()
        for c in consumers:
            c.join(timeout=10)
        if pub_client is not None:
            pub_client.close()

    for c in consumers:
        if c.error is not None:
            raise EmulationError(f"subscriber {c.queue_name} failed: {c.error!r}")
        if c.sink is not None:
            continue
        for cls, r in c.rows.items():
            rows[cls].consumed += r.consumed
            rows[cls].consumed_bytes += r.consumed_bytes

    if sink is not None:
        summary = sink.close()
        summary.selects = summary_sel.selects
        summary.select_seconds = summary_sel.select_seconds
        summary.records = len(store)
        report.store = summary
        if backend == "store":
            for cls, row in rows.items():
                row.consumed = 0
    report.sources = dict(rows)
    pub = report.total.published
    report.fanout_oracle = oracle_total / pub if (pub and use_broker) else 0.0
    report.sequence_digest = digest.hexdigest()
    report.wall_seconds = time.perf_counter() - started
    report.store_handle = store
    return report


def _queue_counts(embedded, client, names) -> tuple[int, int]:
    stats = embedded.stats() if embedded is not None else client.stats()
    delivered = dropped = 0
    for n in names:
        q = stats.queues.get(n)
        if q:
            delivered += q["delivered"]
            dropped += q["dropped"]
    return delivered, dropped


def _check_consumers(consumers) -> None:
    for c in consumers:
        if c.error is not None:
            raise EmulationError(f"subscriber {c.queue_name} failed: {c.error!r}")


def _drain(embedded, client, names, consumers, before, timeout) -> tuple[int, int]:
    """Wait until subscribers consumed everything enqueued for them."""
    deadline = time.monotonic() + timeout
    while True:
        delivered, dropped = _queue_counts(embedded, client, names)
        delivered -= before[0]
        dropped -= before[1]
        consumed = sum(c.count for c in consumers)
        if consumed >= delivered:
            return delivered, dropped
        _check_consumers(consumers)
        if time.monotonic() > deadline:
            raise EmulationError(
                f"subscribers did not drain: consumed {consumed} of {delivered}")
        time.sleep(0.02)
