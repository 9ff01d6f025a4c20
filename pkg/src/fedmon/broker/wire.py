"""Length-prefixed binary frames.

Layout: ``u32 big-endian length | u8 type | payload`` where ``length`` counts
the type byte plus the payload. Strings are ``u16`` length-prefixed UTF-8;
bodies are ``u32`` length-prefixed bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import ClassVar, Union

MAX_FRAME_SIZE = 16 * 1024 * 1024

DECLARE, BIND, PUBLISH, SUBSCRIBE, DELIVER, ACK, STATS_REQ, STATS_RESP, ERROR = range(1, 10)

_LEN = struct.Struct(">I")
_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class ProtocolError(Exception):
    """Malformed, truncated or oversized frame. The connection must close."""


@dataclass(frozen=True)
class Declare:
    TYPE: ClassVar[int] = DECLARE
    exchange: str


@dataclass(frozen=True)
class Bind:
    TYPE: ClassVar[int] = BIND
    queue: str
    exchange: str
    pattern: str


@dataclass(frozen=True)
class Publish:
    TYPE: ClassVar[int] = PUBLISH
    exchange: str
    routing_key: str
    published_us: int
    body: bytes


@dataclass(frozen=True)
class Subscribe:
    TYPE: ClassVar[int] = SUBSCRIBE
    queue: str
    explicit_ack: bool = True
    prefetch: int = 0


@dataclass(frozen=True)
class Deliver:
    TYPE: ClassVar[int] = DELIVER
    tag: int
    queue: str
    routing_key: str
    published_us: int
    redelivered: bool
    body: bytes


@dataclass(frozen=True)
class Ack:
    TYPE: ClassVar[int] = ACK
    tag: int


@dataclass(frozen=True)
class StatsReq:
    TYPE: ClassVar[int] = STATS_REQ


@dataclass(frozen=True)
class StatsResp:
    TYPE: ClassVar[int] = STATS_RESP
    document: bytes


@dataclass(frozen=True)
class Error:
    TYPE: ClassVar[int] = ERROR
    code: int
    message: str


Frame = Union[Declare, Bind, Publish, Subscribe, Deliver, Ack, StatsReq, StatsResp, Error]


def _s(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProtocolError("string field exceeds 65535 bytes")
    return _U16.pack(len(raw)) + raw


def _b(data: bytes) -> bytes:
    return _U32.pack(len(data)) + data


def _payload(frame: Frame) -> bytes:
    t = frame.TYPE
    if t == PUBLISH:
        return b"".join((_s(frame.exchange), _s(frame.routing_key),
                         _U64.pack(frame.published_us), _b(frame.body)))
    if t == DELIVER:
        return b"".join((_U64.pack(frame.tag), _s(frame.queue), _s(frame.routing_key),
                         _U64.pack(frame.published_us), _U8.pack(frame.redelivered),
                         _b(frame.body)))
    if t == ACK:
        return _U64.pack(frame.tag)
    if t == DECLARE:
        return _s(frame.exchange)
    if t == BIND:
        return _s(frame.queue) + _s(frame.exchange) + _s(frame.pattern)
    if t == SUBSCRIBE:
        return _s(frame.queue) + _U8.pack(frame.explicit_ack) + _U32.pack(frame.prefetch)
    if t == STATS_REQ:
        return b""
    if t == STATS_RESP:
        return _b(frame.document)
    if t == ERROR:
        return _U16.pack(frame.code) + _s(frame.message)
    raise ProtocolError(f"cannot encode {frame!r}")


def encode_frame(frame: Frame, max_frame: int = MAX_FRAME_SIZE) -> bytes:
    payload = _payload(frame)
    length = len(payload) + 1
    if length > max_frame:
        raise ProtocolError(f"frame of {length} bytes exceeds max frame size {max_frame}")
    return _LEN.pack(length) + _U8.pack(frame.TYPE) + payload


class _Reader:
    __slots__ = ("buf", "pos", "end")

    def __init__(self, buf, pos: int, end: int):
        self.buf, self.pos, self.end = buf, pos, end

    def take(self, n: int) -> bytes:
        p = self.pos
        if p + n > self.end:
            raise ProtocolError("truncated frame payload")
        self.pos = p + n
        return bytes(self.buf[p:p + n])

    def fixed(self, st: struct.Struct) -> int:
        p = self.pos
        if p + st.size > self.end:
            raise ProtocolError("truncated frame payload")
        self.pos = p + st.size
        return st.unpack_from(self.buf, p)[0]

    def string(self) -> str:
        n = self.fixed(_U16)
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"invalid UTF-8 string: {exc}") from None

    def blob(self) -> bytes:
        return self.take(self.fixed(_U32))


def _parse(ftype: int, r: _Reader) -> Frame:
    if ftype == PUBLISH:
        f = Publish(r.string(), r.string(), r.fixed(_U64), r.blob())
    elif ftype == DELIVER:
        f = Deliver(r.fixed(_U64), r.string(), r.string(), r.fixed(_U64),
                    bool(r.fixed(_U8)), r.blob())
    elif ftype == ACK:
        f = Ack(r.fixed(_U64))
    elif ftype == DECLARE:
        f = Declare(r.string())
    elif ftype == BIND:
        f = Bind(r.string(), r.string(), r.string())
    elif ftype == SUBSCRIBE:
        f = Subscribe(r.string(), bool(r.fixed(_U8)), r.fixed(_U32))
    elif ftype == STATS_REQ:
        f = StatsReq()
    elif ftype == STATS_RESP:
        f = StatsResp(r.blob())
    elif ftype == ERROR:
        f = Error(r.fixed(_U16), r.string())
    else:
        raise ProtocolError(f"unknown frame type {ftype}")
    if r.pos != r.end:
        raise ProtocolError(f"{r.end - r.pos} trailing bytes in frame type {ftype}")
    return f


def decode_frame(data: bytes, max_frame: int = MAX_FRAME_SIZE) -> Frame:
    """Decode exactly one frame occupying all of ``data``."""
    dec = FrameDecoder(max_frame)
    frames = dec.feed(data)
    if len(frames) != 1 or dec.pending:
        if not frames:
            raise ProtocolError("truncated frame")
        raise ProtocolError("trailing data after frame")
    return frames[0]


class FrameDecoder:
    """Incremental decoder for a byte stream of frames."""

    def __init__(self, max_frame: int = MAX_FRAME_SIZE):
        self.max_frame = max_frame
        self._buf = bytearray()

    @property
    def pending(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[Frame]:
        buf = self._buf
        buf += data
        frames = []
        pos = 0
        n = len(buf)
        while n - pos >= 4:
            length = _LEN.unpack_from(buf, pos)[0]
            if length == 0:
                raise ProtocolError("zero-length frame")
            if length > self.max_frame:
                raise ProtocolError(
                    f"frame length {length} exceeds max frame size {self.max_frame}")
            end = pos + 4 + length
            if end > n:
                break
            frames.append(_parse(buf[pos + 4], _Reader(buf, pos + 5, end)))
            pos = end
        if pos:
            del buf[:pos]
        return frames
