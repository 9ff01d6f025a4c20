"""Extract-transform-publish adapters with change detection."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

from ..core import Message, canonical_json
from .sources import SOURCE_KINDS, SyntheticSource, make_source

log = logging.getLogger(__name__)

DEFAULT_EXCHANGE = "monitor"
DEFAULT_POLL = {"ganglia": 15.0, "snapp": 10.0, "perfsonar": 60.0, "inca": 60.0,
                "glue2": 120.0, "netlogger": 5.0}


def version_token(raw) -> str:
    data = raw.encode("utf-8") if isinstance(raw, str) else canonical_json(raw)
    return hashlib.sha1(data).hexdigest()


@dataclass
class SourceSnapshot:
    """Entity id -> (version token, raw record)."""

    entries: dict[str, tuple[str, object]] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: dict[str, object]) -> "SourceSnapshot":
        return cls({eid: (version_token(raw), raw) for eid, raw in records.items()})

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Updates:
    changed: list[str]
    removed: list[str]


def detect_updates(previous: SourceSnapshot, current: SourceSnapshot) -> Updates:
    prev = previous.entries
    changed = [eid for eid, (ver, _) in current.entries.items()
               if eid not in prev or prev[eid][0] != ver]
    removed = [eid for eid in prev if eid not in current.entries]
    return Updates(sorted(changed), sorted(removed))


@dataclass
class EtpAdapter:
    source: SyntheticSource
    poll_period: float = 0.0
    exchange: str = DEFAULT_EXCHANGE
    last_seen: SourceSnapshot = field(default_factory=SourceSnapshot)
    errors: int = 0
    cycles: int = 0

    def __post_init__(self):
        if self.source.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source.kind!r}")
        if not self.poll_period:
            self.poll_period = DEFAULT_POLL[self.source.kind]
        if self.poll_period <= 0:
            raise ValueError("poll period must be positive")

    @property
    def kind(self) -> str:
        return self.source.kind


def run_etp_cycle(adapter: EtpAdapter, broker, now: float | None = None) -> int:
    """One poll: extract, diff, transform changed records, publish.

    ``broker`` is anything with ``publish(exchange, message)``. Returns the
    number of messages published. An extraction failure skips the cycle and
    leaves the last-seen snapshot untouched.
    """
    now = time.time() if now is None else now
    adapter.cycles += 1
    try:
        current = SourceSnapshot.from_records(adapter.source.extract(now))
    except Exception as exc:
        adapter.errors += 1
        log.warning("%s extraction failed: %s", adapter.kind, exc)
        return 0
    updates = detect_updates(adapter.last_seen, current)
    published = 0
    for eid in updates.changed:
        raw = current.entries[eid][1]
        doc = adapter.source.transform(raw)
        broker.publish(adapter.exchange,
                       Message.create(adapter.source.routing_key(eid, raw), doc))
        published += 1
    adapter.last_seen = current
    return published


def adapter_from_config(block: dict, seed: int = 0) -> EtpAdapter:
    """Build an adapter from a profile ``adapters`` entry.

    ``{"kind": "ganglia", "site": "sierra", "count": 10, "poll_period": 15}``
    """
    try:
        kind, site, count = block["kind"], block["site"], int(block["count"])
    except KeyError as exc:
        raise ValueError(f"adapter block missing {exc.args[0]!r}") from None
    if count < 0:
        raise ValueError("adapter entity count must be >= 0")
    extras = {k: block[k] for k in ("tests_per_service", "period_range") if k in block}
    source = make_source(kind, site, count, seed=block.get("seed", seed), **extras)
    return EtpAdapter(source, float(block.get("poll_period", 0.0)),
                      block.get("exchange", DEFAULT_EXCHANGE))
