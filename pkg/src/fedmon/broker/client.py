"""Blocking TCP client for the broker wire protocol."""

from __future__ import annotations

import json
import socket
import time
from collections import deque
from dataclasses import dataclass

from ..core import Message, parse_routing_key
from . import wire
from .engine import BrokerError, BrokerStats


class RemoteError(BrokerError):
    """ERROR frame received from the broker."""


@dataclass(frozen=True)
class Delivery:
    tag: int
    queue: str
    message: Message
    redelivered: bool = False


def parse_endpoint(text: str, default_port: int = 5680) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text or "127.0.0.1", default_port
    if not port.isdigit():
        raise ValueError(f"bad endpoint {text!r}")
    return host or "127.0.0.1", int(port)


class BrokerClient:
    """One connection. Not thread-safe; use one client per thread.

    Publishes are buffered up to ``flush_bytes`` unless ``flush=True``;
    acks are buffered until the next blocking read or explicit flush.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 5680,
                 timeout: float = 10.0, max_frame: int = wire.MAX_FRAME_SIZE,
                 flush_bytes: int = 64 * 1024):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.timeout = timeout
        self.max_frame = max_frame
        self.flush_bytes = flush_bytes
        self._out = bytearray()
        self._decoder = wire.FrameDecoder(max_frame)
        self._frames: deque = deque()
        self._deliveries: deque[Delivery] = deque()
        self._keys: dict = {}
        self.closed = False

    @classmethod
    def connect(cls, endpoint: str, **kw) -> "BrokerClient":
        host, port = parse_endpoint(endpoint)
        return cls(host, port, **kw)

    # -- output

    def _queue_frame(self, frame) -> None:
        self._out += wire.encode_frame(frame, self.max_frame)

    def flush(self) -> None:
        if self._out:
            self.sock.sendall(self._out)
            self._out.clear()

    def declare_exchange(self, name: str) -> None:
        self._queue_frame(wire.Declare(name))
        self.sync()

    def bind(self, queue: str, exchange: str, pattern) -> None:
        self._queue_frame(wire.Bind(queue, exchange, str(pattern)))
        self.sync()

    def publish(self, exchange: str, message: Message, flush: bool = False) -> None:
        self._queue_frame(wire.Publish(exchange, message.key_text,
                                       int(round(message.published_at * 1e6)), message.body))
        if flush or len(self._out) >= self.flush_bytes:
            self.flush()

    def subscribe(self, queue: str, explicit_ack: bool = True, prefetch: int = 0) -> None:
        self._queue_frame(wire.Subscribe(queue, explicit_ack, prefetch))
        self.flush()

    def ack(self, tag: int) -> None:
        self._queue_frame(wire.Ack(tag))
        if len(self._out) >= self.flush_bytes:
            self.flush()

    # -- input

    def _read(self, timeout: float | None) -> bool:
        """Read once from the socket; False on timeout."""
        self.flush()
        self.sock.settimeout(timeout)
        try:
            data = self.sock.recv(1 << 18)
        except (socket.timeout, BlockingIOError):
            return False
        finally:
            self.sock.settimeout(self.timeout)
        if not data:
            self.closed = True
            raise ConnectionError("broker closed the connection")
        for f in self._decoder.feed(data):
            if f.TYPE == wire.DELIVER:
                self._deliveries.append(self._delivery(f))
            else:
                self._frames.append(f)
        return True

    def _delivery(self, f: wire.Deliver) -> Delivery:
        key = self._keys.get(f.routing_key)
        if key is None:
            key = self._keys[f.routing_key] = parse_routing_key(f.routing_key)
        return Delivery(f.tag, f.queue, Message(key, f.body, f.published_us / 1e6),
                        f.redelivered)

    def _control(self, want: int, timeout: float | None):
        deadline = None if timeout is None else time.monotonic() + timeout
        error = None
        while True:
            while self._frames:
                f = self._frames.popleft()
                if f.TYPE == wire.ERROR:
                    error = error or f
                elif f.TYPE == want:
                    # the reply closes this round trip; report the first error seen in it
                    if error is not None:
                        raise RemoteError(error.message)
                    return f
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                if error is not None:
                    raise RemoteError(error.message)
                raise TimeoutError("no response from broker")
            try:
                self._read(remaining)
            except ConnectionError:
                if error is not None:
                    raise RemoteError(error.message) from None
                raise

    def get(self, timeout: float | None = None) -> Delivery | None:
        """Next delivery, or None if nothing arrives within ``timeout``."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._deliveries:
            if self._frames and self._frames[0].TYPE == wire.ERROR:
                raise RemoteError(self._frames.popleft().message)
            if deadline is None:
                self._read(None)
                continue
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._read(0.0)
                break
            self._read(remaining)
        return self._deliveries.popleft() if self._deliveries else None

    def sync(self, timeout: float | None = None) -> BrokerStats:
        """Round trip through the broker; raises any pending ERROR."""
        return self.stats(timeout)

    def stats(self, timeout: float | None = None) -> BrokerStats:
        self._queue_frame(wire.StatsReq())
        f = self._control(wire.STATS_RESP, self.timeout if timeout is None else timeout)
        return BrokerStats.from_dict(json.loads(f.document))

    def close(self) -> None:
        try:
            self.flush()
        except OSError:
            pass
        self.sock.close()
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
