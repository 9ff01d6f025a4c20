"""N producers to N consumers, as fast as possible, against the broker or the store.

Broker mode runs the broker, the producers and the consumers in three separate
processes (unless ``connect`` names an existing broker). Each side multiplexes
its N connections on one asyncio loop. Pair ``i`` publishes with routing key
``bench.<run>.p<i>`` and its consumer drains queue ``bench.<run>.q<i>``, so every
consumer sees exactly its producer's stream.

Store mode runs N writer threads upserting one record each as fast as they can,
while N paired reader threads select that record by key.
"""

from __future__ import annotations

import asyncio
import multiprocessing as mp
import random
import statistics
import struct
import threading
import time
import uuid
from dataclasses import dataclass, field

from ..broker import wire
from ..broker.client import BrokerClient, parse_endpoint
from ..broker.server import BrokerServer
from ..store import HybridStore, KeyFields, QueryFilter

BACKENDS = ("broker", "store")
MIB = float(1 << 20)
EXCHANGE = "bench"
_HEADER = struct.Struct(">qd")   # sequence number, send time
_BATCH = 64
_LATENCY_EVERY = 64


class ThroughputError(RuntimeError):
    pass


@dataclass
class ThroughputReport:
    pairs: int
    message_bytes: int
    backend: str
    duration: float                 # seconds from first send to last receipt
    sent: list = field(default_factory=list)
    received: list = field(default_factory=list)
    duplicates: int = 0
    out_of_order: int = 0
    latency_ms: dict = field(default_factory=dict)

    @property
    def messages(self) -> int:
        return sum(self.received)

    @property
    def msgs_per_sec(self) -> float:
        return self.messages / self.duration if self.duration > 0 else 0.0

    @property
    def mb_per_sec(self) -> float:
        return self.msgs_per_sec * self.message_bytes / MIB

    @property
    def conserved(self) -> bool:
        return self.sent == self.received and self.duplicates == 0

    def row(self) -> dict:
        return {
            "backend": self.backend,
            "pairs": self.pairs,
            "message_bytes": self.message_bytes,
            "Throughput (msg/sec)": self.msgs_per_sec,
            "Bandwidth (MB/sec)": self.mb_per_sec,
            "sent": sum(self.sent),
            "received": self.messages,
            "conserved": self.conserved,
            "latency_p50_ms": self.latency_ms.get("p50", 0.0),
            "latency_p95_ms": self.latency_ms.get("p95", 0.0),
            "latency_p99_ms": self.latency_ms.get("p99", 0.0),
            "duration": self.duration,
        }

    def to_dict(self) -> dict:
        return {**self.row(), "sent_per_pair": list(self.sent),
                "received_per_pair": list(self.received),
                "duplicates": self.duplicates, "out_of_order": self.out_of_order}


def percentiles(samples: list[float]) -> dict:
    if not samples:
        return {"p50": 0.0, "p95": 0.0, "p99": 0.0}
    if len(samples) == 1:
        return {k: samples[0] for k in ("p50", "p95", "p99")}
    q = statistics.quantiles(samples, n=100, method="inclusive")
    return {"p50": q[49], "p95": q[94], "p99": q[98]}


# -- broker mode: producer and consumer processes


async def _produce_one(host, port, exchange, key, size, t_end) -> int:
    reader, writer = await asyncio.open_connection(host, port)
    pad = b"x" * max(0, size - _HEADER.size)
    n = 0
    try:
        while time.time() < t_end:
            now = time.time()
            us = int(now * 1e6)
            batch = [wire.encode_frame(wire.Publish(
                exchange, key, us, (_HEADER.pack(n + k, now) + pad)[:max(size, 0)]))
                for k in range(_BATCH)]
            writer.writelines(batch)
            n += _BATCH
            await writer.drain()
        # round trip so the broker has routed everything before we report
        writer.write(wire.encode_frame(wire.StatsReq()))
        await writer.drain()
        dec = wire.FrameDecoder()
        while True:
            data = await reader.read(1 << 16)
            if not data:
                raise ThroughputError("broker closed the producer connection")
            if any(f.TYPE == wire.STATS_RESP for f in dec.feed(data)):
                break
    finally:
        writer.close()
    return n


def _producer_main(endpoint, exchange, keys, size, t_start, t_end, conn):
    async def go():
        host, port = endpoint
        delay = t_start - time.time()
        if delay > 0:
            await asyncio.sleep(delay)
        return await asyncio.gather(*(_produce_one(host, port, exchange, k, size, t_end)
                                      for k in keys))
    try:
        conn.send(("ok", list(asyncio.run(go()))))
    except BaseException as exc:
        conn.send(("error", repr(exc)))


class _PairState:
    __slots__ = ("received", "next_seq", "dups", "disorder", "last", "latencies")

    def __init__(self):
        self.received = 0
        self.next_seq = 0
        self.dups = 0
        self.disorder = 0
        self.last = 0.0
        self.latencies: list[float] = []


async def _consume_one(host, port, queue, st: _PairState, target: list, done: asyncio.Event):
    reader, writer = await asyncio.open_connection(host, port)
    writer.write(wire.encode_frame(wire.Subscribe(queue, explicit_ack=False)))
    await writer.drain()
    dec = wire.FrameDecoder()
    unpack = _HEADER.unpack_from
    try:
        while target[0] is None or st.received < target[0]:
            try:
                data = await asyncio.wait_for(reader.read(1 << 18), 0.5)
            except asyncio.TimeoutError:
                if done.is_set():
                    return
                continue
            if not data:
                raise ThroughputError("broker closed the consumer connection")
            now = time.time()
            for f in dec.feed(data):
                if f.TYPE == wire.ERROR:
                    raise ThroughputError(f"broker error: {f.message}")
                if f.TYPE != wire.DELIVER:
                    continue
                seq, sent = unpack(f.body) if len(f.body) >= _HEADER.size else (st.next_seq, now)
                if seq == st.next_seq:
                    st.next_seq += 1
                elif seq < st.next_seq:
                    st.dups += 1
                else:
                    st.disorder += 1
                    st.next_seq = seq + 1
                if st.received % _LATENCY_EVERY == 0:
                    st.latencies.append((now - sent) * 1000.0)
                st.received += 1
                st.last = now
    finally:
        writer.close()


def _consumer_main(endpoint, queues, conn):
    async def go():
        host, port = endpoint
        states = [_PairState() for _ in queues]
        targets = [[None] for _ in queues]
        done = asyncio.Event()
        loop = asyncio.get_running_loop()
        tasks = [asyncio.ensure_future(_consume_one(host, port, q, st, tg, done))
                 for q, st, tg in zip(queues, states, targets)]
        conn.send(("subscribed", None))
        # wait for the parent to tell us how many messages each pair sent
        msg = await loop.run_in_executor(None, conn.recv)
        if msg[0] == "sent":
            for tg, n in zip(targets, msg[1]):
                tg[0] = n
            deadline = time.time() + msg[2]
            while not all(t.done() for t in tasks) and time.time() < deadline:
                await asyncio.sleep(0.05)
        done.set()
        await asyncio.gather(*tasks)
        return [(s.received, s.dups, s.disorder, s.last, s.latencies) for s in states]
    try:
        conn.send(("ok", asyncio.run(go())))
    except BaseException as exc:
        conn.send(("error", repr(exc)))


def _broker_main(conn, max_frame):
    server = BrokerServer(port=0, max_frame=max_frame)
    host, port = server.start()
    conn.send((host, port))
    conn.recv()          # any message (or EOF) stops the broker
    server.stop()


def _expect(conn, what: str, timeout: float):
    if not conn.poll(timeout):
        raise ThroughputError(f"timed out waiting for {what}")
    tag, value = conn.recv()
    if tag == "error":
        raise ThroughputError(f"{what} failed: {value}")
    return value


def _run_broker(pairs, size, duration, connect, drain_timeout) -> ThroughputReport:
    ctx = mp.get_context("spawn")
    procs = []
    broker_conn = None
    try:
        if connect:
            endpoint = parse_endpoint(connect)
        else:
            broker_conn, child = ctx.Pipe()
            bp = ctx.Process(target=_broker_main, args=(child, wire.MAX_FRAME_SIZE), daemon=True)
            bp.start()
            procs.append(bp)
            if not broker_conn.poll(30):
                raise ThroughputError("broker process did not start")
            endpoint = broker_conn.recv()
        run = uuid.uuid4().hex[:8]
        keys = [f"bench.{run}.p{i}" for i in range(pairs)]
        queues = [f"bench.{run}.q{i}" for i in range(pairs)]
        try:
            with BrokerClient(*endpoint) as admin:
                admin.declare_exchange(EXCHANGE)
                for k, q in zip(keys, queues):
                    admin.bind(q, EXCHANGE, k)
        except OSError as exc:
            raise ThroughputError(f"broker {endpoint[0]}:{endpoint[1]} unreachable: {exc}") from None

        c_parent, c_child = ctx.Pipe()
        cp = ctx.Process(target=_consumer_main, args=(endpoint, queues, c_child), daemon=True)
        cp.start()
        procs.append(cp)
        _expect(c_parent, "consumer subscription", 30)

        p_parent, p_child = ctx.Pipe()
        t_start = time.time() + 1.0
        pp = ctx.Process(target=_producer_main,
                         args=(endpoint, EXCHANGE, keys, size, t_start, t_start + duration, p_child),
                         daemon=True)
        pp.start()
        procs.append(pp)
        sent = _expect(p_parent, "producers", duration + 60 + drain_timeout)
        c_parent.send(("sent", sent, drain_timeout))
        per_pair = _expect(c_parent, "consumers", drain_timeout + 30)
    finally:
        if broker_conn is not None:
            try:
                broker_conn.send("stop")
            except OSError:
                pass
        for p in procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()

    last = max((r[3] for r in per_pair), default=t_start)
    lat = [x for r in per_pair for x in r[4]]
    return ThroughputReport(
        pairs, size, "broker", max(0.0, last - t_start), list(sent),
        [r[0] for r in per_pair], sum(r[1] for r in per_pair), sum(r[2] for r in per_pair),
        percentiles(lat))


# -- store mode


def _run_store(pairs, size, duration) -> ThroughputReport:
    store = HybridStore()
    stop = threading.Event()
    sent = [0] * pairs
    reads = [0] * pairs
    lat: list[list[float]] = [[] for _ in range(pairs)]
    errors: list[BaseException] = []
    pad = "x" * max(0, size - 64)

    def keys(i):
        return KeyFields("bench", "local", f"w{i}", None, "partition", None)

    def writer(i):
        k = keys(i)
        try:
            n = 0
            while not stop.is_set():
                t0 = time.perf_counter()
                store.upsert_latest({"w": i, "seq": n, "pad": pad}, k)
                if n % _LATENCY_EVERY == 0:
                    lat[i].append((time.perf_counter() - t0) * 1000.0)
                n += 1
            sent[i] = n
        except BaseException as exc:
            errors.append(exc)

    def reader(i):
        flt = QueryFilter(source="bench", resource=f"w{i}", kind="partition", latest_only=True)
        try:
            while not stop.is_set():
                store.query(flt)
                reads[i] += 1
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=f, args=(i,), daemon=True)
               for i in range(pairs) for f in (writer, reader)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    time.sleep(duration)
    stop.set()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - t0
    if errors:
        raise ThroughputError(f"store worker failed: {errors[0]!r}")
    # conservation: every pair's record holds its last update and nothing was lost
    received = []
    for i in range(pairs):
        hits = store.query(QueryFilter(source="bench", resource=f"w{i}", kind="partition"))
        ok = len(hits) == 1 and hits[0].document["seq"] == sent[i] - 1
        received.append(sent[i] if ok or sent[i] == 0 else hits[0].document["seq"] + 1)
    if store.update_count != sum(sent):
        raise ThroughputError(f"store applied {store.update_count} updates, sent {sum(sent)}")
    return ThroughputReport(pairs, size, "store", elapsed, sent, received, 0, 0,
                            percentiles([x for xs in lat for x in xs]))


def run_throughput(pairs: int, message_bytes: int, duration: float, backend: str = "broker",
                   connect: str | None = None, drain_timeout: float = 60.0) -> ThroughputReport:
    """Blast ``pairs`` producer/consumer pairs for ``duration`` seconds."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    if message_bytes < 0:
        raise ValueError("message_bytes must be >= 0")
    if duration <= 0:
        raise ValueError("duration must be > 0")
    if backend == "broker":
        return _run_broker(pairs, message_bytes, duration, connect, drain_timeout)
    if backend == "store":
        return _run_store(pairs, message_bytes, duration)
    raise ValueError(f"backend must be one of {BACKENDS}")


# -- paced store ingest with integrity checks


@dataclass
class IngestReport:
    writers: int
    duration: float
    offered_rate: float
    upserts: int
    appends: int
    lost: int
    duplicated: int
    latest_violations: int

    @property
    def operations(self) -> int:
        return self.upserts + self.appends

    @property
    def ops_per_sec(self) -> float:
        return self.operations / self.duration if self.duration > 0 else 0.0

    @property
    def clean(self) -> bool:
        return self.lost == 0 and self.duplicated == 0 and self.latest_violations == 0

    def to_dict(self) -> dict:
        return {**self.__dict__, "operations": self.operations,
                "ops_per_sec": self.ops_per_sec, "clean": self.clean}


SNAPSHOT_KEYS_PER_WRITER = 8


def run_store_ingest(writers: int = 16, duration: float = 60.0, rate: float = 400.0,
                     seed: int = 0, store: HybridStore | None = None) -> IngestReport:
    """Offer ``rate`` mixed upserts and appends per second from ``writers`` threads.

    Afterwards every append must be present exactly once and every snapshot key
    must hold exactly one record, equal to that key's last upsert.
    """
    if writers < 1 or rate <= 0 or duration < 0:
        raise ValueError("need writers >= 1, rate > 0, duration >= 0")
    store = store if store is not None else HybridStore()
    per_writer = rate / writers
    appended = [0] * writers
    last_upsert: list[dict] = [dict() for _ in range(writers)]
    upserts = [0] * writers
    errors: list[BaseException] = []
    pad = "y" * 1800
    t0 = time.perf_counter() + 0.05

    def work(w):
        rng = random.Random(f"{seed}:{w}")
        n = 0
        try:
            while True:
                due = t0 + n / per_writer
                if due - t0 >= duration:
                    return
                delay = due - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                if rng.random() < 0.5:
                    slot = rng.randrange(SNAPSHOT_KEYS_PER_WRITER)
                    kind = "queue" if slot % 2 else "partition"
                    k = KeyFields("ingest", f"s{w}", f"r{slot}", None, kind, None)
                    store.upsert_latest({"w": w, "op": n, "pad": pad}, k)
                    last_upsert[w][(f"r{slot}", kind)] = n
                    upserts[w] += 1
                else:
                    k = KeyFields("ingest", f"s{w}", "series", None, "metrics", None)
                    store.append_series({"w": w, "op": n, "pad": pad}, k)
                    appended[w] += 1
                n += 1
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(w,), daemon=True) for w in range(writers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = max(duration, time.perf_counter() - t0)
    if errors:
        raise ThroughputError(f"ingest writer failed: {errors[0]!r}")

    lost = dup = bad_latest = 0
    for w in range(writers):
        series = store.query(QueryFilter(source="ingest", site=f"s{w}", kind="metrics"))
        ops = [r.document["op"] for r in series]
        dup += len(ops) - len(set(ops))
        lost += max(0, appended[w] - len(set(ops)))
        for (res, kind), op in last_upsert[w].items():
            hits = store.query(QueryFilter(source="ingest", site=f"s{w}", resource=res, kind=kind))
            if len(hits) != 1:
                bad_latest += 1
                dup += max(0, len(hits) - 1)
                lost += 1 if not hits else 0
            elif hits[0].document["op"] != op:
                lost += 1
    return IngestReport(writers, elapsed, rate, sum(upserts), sum(appended), lost, dup,
                        bad_latest)
