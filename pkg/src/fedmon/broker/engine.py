"""In-process topic-exchange broker.

Exchanges route to queues through (pattern, queue) bindings. A message is
enqueued at most once per queue no matter how many of that queue's bindings
match. Co-consumers of one queue share its work; fan-out comes from bindings.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator

from ..core import Message, RoutingPattern, as_pattern, matches_text

DEFAULT_QUEUE_CAPACITY = 100_000
AUTO_ACK = "auto"
EXPLICIT_ACK = "explicit"


class BrokerError(Exception):
    pass


class UnknownExchange(BrokerError):
    pass


class UnknownQueue(BrokerError):
    pass


class UnknownDeliveryTag(BrokerError):
    pass


@dataclass
class _Counters:
    published: int = 0
    published_bytes: int = 0
    delivered: int = 0
    delivered_bytes: int = 0
    acked: int = 0
    dropped: int = 0
    redelivered: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class BrokerStats:
    published_count: int
    delivered_count: int
    acked_count: int
    dropped_count: int
    redelivered_count: int
    published_bytes: int
    delivered_bytes: int
    exchanges: dict
    queues: dict

    def to_dict(self) -> dict:
        return {
            "published_count": self.published_count,
            "delivered_count": self.delivered_count,
            "acked_count": self.acked_count,
            "dropped_count": self.dropped_count,
            "redelivered_count": self.redelivered_count,
            "published_bytes": self.published_bytes,
            "delivered_bytes": self.delivered_bytes,
            "exchanges": self.exchanges,
            "queues": self.queues,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BrokerStats":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


class Exchange:
    def __init__(self, name: str):
        self.name = name
        self.bindings: set[tuple[RoutingPattern, str]] = set()
        self._route_cache: dict[str, tuple[str, ...]] = {}

    def add_binding(self, pattern: RoutingPattern, queue: str) -> bool:
        if (pattern, queue) in self.bindings:
            return False
        self.bindings.add((pattern, queue))
        self._route_cache.clear()
        return True

    def route(self, key_text: str) -> tuple[str, ...]:
        """Names of queues with at least one binding matching ``key_text``."""
        hit = self._route_cache.get(key_text)
        if hit is None:
            names = {q for p, q in self.bindings if matches_text(p, key_text)}
            hit = tuple(sorted(names))
            if len(self._route_cache) > 100_000:
                self._route_cache.clear()
            self._route_cache[key_text] = hit
        return hit


class Queue:
    def __init__(self, name: str, capacity: int):
        self.name = name
        self.capacity = capacity
        self.buffer: deque[tuple[Message, bool]] = deque()
        self.cond = threading.Condition()
        self.consumers = 0
        self.listeners: list[Callable[["Queue"], None]] = []
        self.counters = _Counters()

    def __len__(self) -> int:
        return len(self.buffer)


class Consumer:
    """Handle for pulling deliveries from one queue.

    In explicit-ack mode every delivery stays unacked until :meth:`ack`;
    closing the consumer puts unacked messages back at the head of the queue.
    """

    def __init__(self, broker: "Broker", queue: Queue, mode: str):
        if mode not in (AUTO_ACK, EXPLICIT_ACK):
            raise ValueError(f"unknown ack mode {mode!r}")
        self.broker = broker
        self.queue = queue
        self.mode = mode
        self.unacked: dict[int, Message] = {}
        self.closed = False

    def get(self, timeout: float | None = None) -> tuple[int, Message] | None:
        """Next (tag, message), or None on timeout."""
        if self.closed:
            raise BrokerError("consumer closed")
        q = self.queue
        with q.cond:
            if not q.buffer:
                if timeout == 0 or not q.cond.wait_for(lambda: q.buffer or self.closed, timeout):
                    return None
                if self.closed:
                    return None
            msg, _redelivered = q.buffer.popleft()
        return self.broker._hand_out(self, msg)

    def get_nowait(self) -> tuple[int, Message] | None:
        return self.get(timeout=0)

    def __iter__(self) -> Iterator[tuple[int, Message]]:
        while True:
            item = self.get(timeout=None)
            if item is None:
                return
            yield item

    def ack(self, tag: int) -> None:
        msg = self.unacked.pop(tag, None)
        if msg is None:
            raise UnknownDeliveryTag(f"unknown delivery tag {tag}")
        self.broker._count_ack(self.queue)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.broker._release(self)


class Broker:
    """Thread-safe embedded broker."""

    def __init__(self, queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        if queue_capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.queue_capacity = queue_capacity
        self.exchanges: dict[str, Exchange] = {}
        self.queues: dict[str, Queue] = {}
        self._lock = threading.RLock()
        self._stats_lock = threading.Lock()
        self._totals = _Counters()
        self._per_exchange: dict[str, _Counters] = {}
        self._tags = itertools.count(1)

    # -- topology

    def declare_exchange(self, name: str) -> Exchange:
        if not name:
            raise BrokerError("exchange name must be nonempty")
        with self._lock:
            ex = self.exchanges.get(name)
            if ex is None:
                ex = self.exchanges[name] = Exchange(name)
                self._per_exchange[name] = _Counters()
            return ex

    def declare_queue(self, name: str, capacity: int | None = None) -> Queue:
        if not name:
            raise BrokerError("queue name must be nonempty")
        with self._lock:
            q = self.queues.get(name)
            if q is None:
                q = self.queues[name] = Queue(name, capacity or self.queue_capacity)
            return q

    def bind(self, queue: str, exchange: str, pattern: RoutingPattern | str) -> None:
        pat = as_pattern(pattern)
        with self._lock:
            ex = self.exchanges.get(exchange)
            if ex is None:
                raise UnknownExchange(f"unknown exchange {exchange!r}")
            self.declare_queue(queue)
            ex.add_binding(pat, queue)

    def queue(self, name: str) -> Queue:
        q = self.queues.get(name)
        if q is None:
            raise UnknownQueue(f"unknown queue {name!r}")
        return q

    # -- data path

    def publish(self, exchange: str, message: Message) -> int:
        """Route ``message``; return the number of queues it reached."""
        ex = self.exchanges.get(exchange)
        if ex is None:
            raise UnknownExchange(f"unknown exchange {exchange!r}")
        size = message.payload_size
        reached = 0
        ready: list[Queue] = []
        with self._lock:
            targets = ex.route(message.key_text)
            with self._stats_lock:
                ec = self._per_exchange[exchange]
                self._totals.published += 1
                self._totals.published_bytes += size
                ec.published += 1
                ec.published_bytes += size
                for name in targets:
                    q = self.queues[name]
                    with q.cond:
                        if len(q.buffer) >= q.capacity:
                            q.counters.dropped += 1
                            self._totals.dropped += 1
                            ec.dropped += 1
                            continue
                        q.buffer.append((message, False))
                        q.cond.notify()
                    q.counters.delivered += 1
                    q.counters.delivered_bytes += size
                    reached += 1
                    if q.listeners:
                        ready.append(q)
                self._totals.delivered += reached
                self._totals.delivered_bytes += reached * size
                ec.delivered += reached
                ec.delivered_bytes += reached * size
        for q in ready:
            for listener in q.listeners:
                listener(q)
        return reached

    def consume(self, queue: str, mode: str = EXPLICIT_ACK) -> Consumer:
        q = self.queue(queue)
        with q.cond:
            q.consumers += 1
        return Consumer(self, q, mode)

    def _hand_out(self, consumer: Consumer, msg: Message) -> tuple[int, Message]:
        tag = next(self._tags)
        if consumer.mode == EXPLICIT_ACK:
            consumer.unacked[tag] = msg
        else:
            self._count_ack(consumer.queue)
        return tag, msg

    def _count_ack(self, q: Queue) -> None:
        with self._stats_lock:
            q.counters.acked += 1
            self._totals.acked += 1

    def _release(self, consumer: Consumer) -> None:
        q = consumer.queue
        pending = list(consumer.unacked.values())
        consumer.unacked.clear()
        self.requeue(q, pending)
        with q.cond:
            q.consumers -= 1
            q.cond.notify_all()

    def requeue(self, q: Queue, messages: list[Message]) -> None:
        """Put unacked messages back at the head of ``q`` in original order."""
        if not messages:
            return
        with q.cond:
            q.buffer.extendleft((m, True) for m in reversed(messages))
            q.cond.notify(len(messages))
        with self._stats_lock:
            q.counters.redelivered += len(messages)
            self._totals.redelivered += len(messages)
        for listener in q.listeners:
            listener(q)

    # -- observation

    def stats(self) -> BrokerStats:
        with self._lock, self._stats_lock:
            t = self._totals
            queues = {}
            for name, q in self.queues.items():
                d = q.counters.as_dict()
                d["depth"] = len(q.buffer)
                d["consumers"] = q.consumers
                queues[name] = d
            return BrokerStats(
                published_count=t.published,
                delivered_count=t.delivered,
                acked_count=t.acked,
                dropped_count=t.dropped,
                redelivered_count=t.redelivered,
                published_bytes=t.published_bytes,
                delivered_bytes=t.delivered_bytes,
                exchanges={n: c.as_dict() for n, c in self._per_exchange.items()},
                queues=queues,
            )

    def total_depth(self) -> int:
        return sum(len(q.buffer) for q in list(self.queues.values()))
