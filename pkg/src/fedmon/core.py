"""Message model, routing keys and topic patterns.

Routing keys are dotted word lists such as ``ganglia.sierra.n042.metrics``.
Patterns use the AMQP topic-exchange wildcards: ``*`` matches exactly one
word and ``#`` matches zero or more words.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Union

Document = Union[dict, list, str, int, float, bool, None]

MAX_KEY_WORDS = 16
ONE = "*"
MANY = "#"
_ILLEGAL = frozenset(".*#")


class RoutingError(ValueError):
    """Malformed routing key or pattern."""


def canonical_json(doc: Any) -> bytes:
    """UTF-8 JSON with sorted keys and no insignificant whitespace."""
    try:
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False, allow_nan=False)
    except ValueError as exc:
        raise ValueError(f"document is not valid JSON: {exc}") from None
    return text.encode("utf-8")


def parse_document(data: bytes | str) -> Document:
    def _reject(token):
        raise ValueError(f"non-finite number {token} in document")
    return json.loads(data, parse_constant=_reject)


def _check_token(token: str, text: str, allow_wildcards: bool) -> None:
    if token == "":
        raise RoutingError(f"empty token in {text!r}")
    if allow_wildcards and token in (ONE, MANY):
        return
    for ch in token:
        if ch in _ILLEGAL or ch.isspace():
            raise RoutingError(f"illegal character {ch!r} in token {token!r}")


@dataclass(frozen=True)
class RoutingKey:
    words: tuple[str, ...]

    def __post_init__(self):
        if not 1 <= len(self.words) <= MAX_KEY_WORDS:
            raise RoutingError(
                f"routing key must have 1..{MAX_KEY_WORDS} words, got {len(self.words)}")
        text = ".".join(self.words)
        for w in self.words:
            _check_token(w, text, allow_wildcards=False)

    def __str__(self) -> str:
        return ".".join(self.words)


@dataclass(frozen=True)
class RoutingPattern:
    elements: tuple[str, ...]

    def __post_init__(self):
        if not self.elements:
            raise RoutingError("empty pattern")
        text = ".".join(self.elements)
        for e in self.elements:
            _check_token(e, text, allow_wildcards=True)

    def __str__(self) -> str:
        return ".".join(self.elements)


def parse_routing_key(text: str) -> RoutingKey:
    words = tuple(text.split("."))
    if len(words) > MAX_KEY_WORDS:
        raise RoutingError(
            f"too many words in {text!r}: {len(words)} > {MAX_KEY_WORDS} "
            f"(first excess token {words[MAX_KEY_WORDS]!r})")
    return RoutingKey(words)


def parse_pattern(text: str) -> RoutingPattern:
    return RoutingPattern(tuple(text.split(".")))


def as_key(key: RoutingKey | str) -> RoutingKey:
    return key if isinstance(key, RoutingKey) else parse_routing_key(key)


def as_pattern(pattern: RoutingPattern | str) -> RoutingPattern:
    return pattern if isinstance(pattern, RoutingPattern) else parse_pattern(pattern)


def match_words(elements: tuple[str, ...], words: tuple[str, ...]) -> bool:
    # reach[j]: the first j key words can be consumed by the elements seen so far
    n = len(words)
    reach = [False] * (n + 1)
    reach[0] = True
    for e in elements:
        if e == MANY:
            seen = False
            for j in range(n + 1):
                seen = seen or reach[j]
                reach[j] = seen
        else:
            for j in range(n, 0, -1):
                reach[j] = reach[j - 1] and (e == ONE or e == words[j - 1])
            reach[0] = False
        if not any(reach):
            return False
    return reach[n]


def pattern_matches(pattern: RoutingPattern | str, key: RoutingKey | str) -> bool:
    """True iff ``key`` is selected by the topic ``pattern``."""
    return match_words(as_pattern(pattern).elements, as_key(key).words)


@lru_cache(maxsize=65536)
def _cached_match(elements: tuple[str, ...], key_text: str) -> bool:
    return match_words(elements, tuple(key_text.split(".")))


def matches_text(pattern: RoutingPattern, key_text: str) -> bool:
    """Memoized match on an already-validated dotted key."""
    return _cached_match(pattern.elements, key_text)


@dataclass(frozen=True)
class Message:
    """A routed document. ``body`` holds the canonical serialization."""

    routing_key: RoutingKey
    body: bytes
    published_at: float = field(default_factory=time.time)

    @classmethod
    def create(cls, routing_key: RoutingKey | str, payload: Document,
               published_at: float | None = None) -> "Message":
        key = as_key(routing_key)
        ts = time.time() if published_at is None else published_at
        return cls(key, canonical_json(payload), round(ts, 6))

    @property
    def payload(self) -> Document:
        return parse_document(self.body)

    @property
    def payload_size(self) -> int:
        return len(self.body)

    @property
    def key_text(self) -> str:
        return str(self.routing_key)
