"""Topic-exchange publish/subscribe broker: embedded engine, wire protocol, TCP server and client."""

from .client import BrokerClient, Delivery, RemoteError, parse_endpoint
from .engine import (AUTO_ACK, DEFAULT_QUEUE_CAPACITY, EXPLICIT_ACK, Broker, BrokerError,
                     BrokerStats, Consumer, Exchange, UnknownDeliveryTag, UnknownExchange,
                     UnknownQueue)
from .server import DEFAULT_PORT, BrokerServer
from .wire import FrameDecoder, ProtocolError, decode_frame, encode_frame

__all__ = [
    "AUTO_ACK", "DEFAULT_PORT", "DEFAULT_QUEUE_CAPACITY", "EXPLICIT_ACK", "Broker",
    "BrokerClient", "BrokerError", "BrokerServer", "BrokerStats", "Consumer", "Delivery",
    "Exchange", "FrameDecoder", "ProtocolError", "RemoteError", "UnknownDeliveryTag",
    "UnknownExchange", "UnknownQueue", "decode_frame", "encode_frame", "parse_endpoint",
]
