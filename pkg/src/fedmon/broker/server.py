"""Asyncio TCP front end for :class:`~fedmon.broker.engine.Broker`."""

from __future__ import annotations

import asyncio
import logging
import threading

from ..core import Message, RoutingError, canonical_json, parse_routing_key
from . import wire
from .engine import AUTO_ACK, EXPLICIT_ACK, Broker, BrokerError, Queue

log = logging.getLogger(__name__)

DEFAULT_PORT = 5680
# Publishers pause while a consumed queue is this deep; drops still apply
# to queues nobody is consuming.
FLOW_HIGH = 2000
FLOW_LOW = 500

ERR_PROTOCOL = 1
ERR_BROKER = 2


class _Subscription:
    __slots__ = ("conn", "queue", "consumer", "prefetch", "ready", "listener")

    def __init__(self, conn, queue: Queue, consumer, prefetch: int):
        self.conn = conn
        self.queue = queue
        self.consumer = consumer
        self.prefetch = prefetch
        self.ready = False
        self.listener = None


class _Connection(asyncio.Protocol):
    def __init__(self, server: "BrokerServer"):
        self.server = server
        self.broker = server.broker
        self.decoder = wire.FrameDecoder(server.max_frame)
        self.transport = None
        self.subs: list[_Subscription] = []
        self.tag_owner: dict[int, _Subscription] = {}
        self.write_paused = False
        self.read_paused_on: set[str] = set()
        self.closed = False

    # -- asyncio callbacks

    def connection_made(self, transport):
        self.transport = transport
        transport.set_write_buffer_limits(high=1 << 20)
        self.server._conns.add(self)

    def connection_lost(self, exc):
        self.closed = True
        self.server._conns.discard(self)
        for q in list(self.read_paused_on):
            self.server._blocked.get(q, set()).discard(self)
        for sub in self.subs:
            sub.queue.listeners.remove(sub.listener)
            sub.consumer.close()
            self.server._maybe_resume(sub.queue)
        self.subs.clear()

    def pause_writing(self):
        self.write_paused = True

    def resume_writing(self):
        self.write_paused = False
        for sub in self.subs:
            self.server._mark_ready(sub)

    def data_received(self, data):
        if self.closed:
            return
        try:
            frames = self.decoder.feed(data)
        except wire.ProtocolError as exc:
            self._fatal(str(exc))
            return
        self.server._publisher = self
        try:
            for frame in frames:
                self._handle(frame)
                if self.closed:
                    return
        finally:
            self.server._publisher = None

    # -- frame handling

    def _send(self, frame) -> None:
        self.transport.write(wire.encode_frame(frame, self.server.max_frame))

    def _fatal(self, message: str) -> None:
        log.info("closing connection: %s", message)
        try:
            self._send(wire.Error(ERR_PROTOCOL, message))
        finally:
            self.closed = True
            self.transport.close()

    def _handle(self, f) -> None:
        t = f.TYPE
        try:
            if t == wire.PUBLISH:
                key = self.server._key(f.routing_key)
                msg = Message(key, f.body, f.published_us / 1e6)
                self.broker.publish(f.exchange, msg)
            elif t == wire.ACK:
                sub = self.tag_owner.pop(f.tag, None)
                if sub is None:
                    raise BrokerError(f"unknown delivery tag {f.tag}")
                sub.consumer.ack(f.tag)
                self.server._mark_ready(sub)
            elif t == wire.DECLARE:
                self.broker.declare_exchange(f.exchange)
            elif t == wire.BIND:
                self.broker.bind(f.queue, f.exchange, f.pattern)
            elif t == wire.SUBSCRIBE:
                self._subscribe(f)
            elif t == wire.STATS_REQ:
                self._send(wire.StatsResp(canonical_json(self.broker.stats().to_dict())))
            else:
                self._fatal(f"unexpected frame type {t} from client")
        except (BrokerError, RoutingError) as exc:
            self._send(wire.Error(ERR_BROKER, str(exc)))

    def _subscribe(self, f: wire.Subscribe) -> None:
        consumer = self.broker.consume(f.queue, EXPLICIT_ACK if f.explicit_ack else AUTO_ACK)
        sub = _Subscription(self, consumer.queue, consumer, f.prefetch)
        sub.listener = lambda q, sub=sub: self.server._mark_ready(sub)
        consumer.queue.listeners.append(sub.listener)
        self.subs.append(sub)
        self.server._mark_ready(sub)

    def pump(self, sub: _Subscription) -> None:
        if self.closed or self.write_paused:
            return
        consumer = sub.consumer
        explicit = consumer.mode == EXPLICIT_ACK
        out = []
        max_frame = self.server.max_frame
        qname = sub.queue.name
        while not sub.prefetch or len(consumer.unacked) < sub.prefetch:
            item = consumer.get_nowait()
            if item is None:
                break
            tag, msg = item
            if explicit:
                self.tag_owner[tag] = sub
            out.append(wire.encode_frame(wire.Deliver(
                tag, qname, msg.key_text, int(round(msg.published_at * 1e6)),
                False, msg.body), max_frame))
            if len(out) >= 256:
                self.transport.writelines(out)
                out = []
                if self.write_paused:
                    break
        if out:
            self.transport.writelines(out)
        self.server._maybe_resume(sub.queue)


class BrokerServer:
    """Serves one :class:`Broker` over TCP.

    ``start()`` runs the event loop on a daemon thread (tests, embedding);
    ``serve_forever()`` runs it on the calling thread.
    """

    def __init__(self, broker: Broker | None = None, host: str = "127.0.0.1",
                 port: int = DEFAULT_PORT, max_frame: int = wire.MAX_FRAME_SIZE,
                 queue_capacity: int | None = None):
        if broker is None:
            broker = Broker(queue_capacity) if queue_capacity else Broker()
        self.broker = broker
        self.host = host
        self.port = port
        self.max_frame = max_frame
        self.loop: asyncio.AbstractEventLoop | None = None
        self._server = None
        self._thread: threading.Thread | None = None
        self._conns: set[_Connection] = set()
        self._ready: list[_Subscription] = []
        self._flush_scheduled = False
        self._blocked: dict[str, set[_Connection]] = {}
        self._publisher: _Connection | None = None
        self._keys: dict = {}
        self._loop_thread_id = None

    # -- lifecycle

    async def _open(self):
        self.loop = asyncio.get_running_loop()
        self._loop_thread_id = threading.get_ident()
        self._server = await self.loop.create_server(
            lambda: _Connection(self), self.host, self.port, reuse_address=True)
        self.port = self._server.sockets[0].getsockname()[1]

    def serve_forever(self) -> None:
        async def main():
            await self._open()
            log.info("broker listening on %s:%d", self.host, self.port)
            async with self._server:
                await self._server.serve_forever()
        asyncio.run(main())

    def start(self) -> tuple[str, int]:
        started = threading.Event()
        failure: list[BaseException] = []

        def run():
            loop = asyncio.new_event_loop()
            asyncio.set_event_loop(loop)
            try:
                loop.run_until_complete(self._open())
            except BaseException as exc:  # surfaced to the caller below
                failure.append(exc)
                started.set()
                loop.close()
                return
            started.set()
            try:
                loop.run_forever()
            finally:
                loop.close()

        self._thread = threading.Thread(target=run, name="broker-server", daemon=True)
        self._thread.start()
        started.wait()
        if failure:
            raise failure[0]
        return self.host, self.port

    def stop(self) -> None:
        loop = self.loop
        if loop is None or loop.is_closed():
            return

        async def shutdown():
            self._server.close()
            for c in list(self._conns):
                c.transport.close()
            await asyncio.sleep(0)
            loop.stop()

        asyncio.run_coroutine_threadsafe(shutdown(), loop)
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- helpers used by connections

    def _key(self, text: str):
        key = self._keys.get(text)
        if key is None:
            key = parse_routing_key(text)
            if len(self._keys) > 100_000:
                self._keys.clear()
            self._keys[text] = key
        return key

    def _mark_ready(self, sub: _Subscription) -> None:
        if threading.get_ident() != self._loop_thread_id:
            self.loop.call_soon_threadsafe(self._mark_ready, sub)
            return
        if not sub.ready:
            sub.ready = True
            self._ready.append(sub)
        q = sub.queue
        pub = self._publisher
        if (pub is not None and pub is not sub.conn and len(q.buffer) >= FLOW_HIGH
                and q.consumers > 0 and q.name not in pub.read_paused_on):
            pub.read_paused_on.add(q.name)
            self._blocked.setdefault(q.name, set()).add(pub)
            pub.transport.pause_reading()
        if not self._flush_scheduled:
            self._flush_scheduled = True
            self.loop.call_soon(self._flush)

    def _flush(self) -> None:
        self._flush_scheduled = False
        ready, self._ready = self._ready, []
        for sub in ready:
            sub.ready = False
            sub.conn.pump(sub)

    def _maybe_resume(self, q: Queue) -> None:
        blocked = self._blocked.get(q.name)
        if blocked and (len(q.buffer) <= FLOW_LOW or q.consumers == 0):
            for conn in list(blocked):
                conn.read_paused_on.discard(q.name)
                if not conn.read_paused_on and not conn.closed:
                    conn.transport.resume_reading()
            blocked.clear()
