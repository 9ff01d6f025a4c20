"""Hybrid searchable cache: key columns plus the full JSON document.

Snapshot kinds (partition, queue, config) keep only the latest record per
(source, site, resource, kind); everything else is appended as a series and
is subject to retention pruning.
"""

from __future__ import annotations

import itertools
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .core import Document, canonical_json, parse_document
from .xform.netlogger import NetLoggerError, parse_timestamp

SNAPSHOT_KINDS = frozenset({"partition", "queue", "config"})
KEY_COLUMNS = ("source", "site", "resource", "service", "kind")
DEFAULT_RETENTION = 3600.0


class StoreError(Exception):
    pass


class JsonPathError(StoreError, ValueError):
    pass


def is_snapshot_kind(kind: str) -> bool:
    return kind in SNAPSHOT_KINDS


@dataclass(frozen=True)
class KeyFields:
    source: str
    site: str = ""
    resource: str = ""
    service: Optional[str] = None
    kind: str = ""
    event_time: Optional[float] = None

    def __post_init__(self):
        if not self.source or not self.kind:
            raise StoreError("source kind and document kind must be nonempty")

    @property
    def snapshot_key(self) -> tuple:
        return (self.source, self.site, self.resource, self.kind)

    def to_dict(self) -> dict:
        return {c: getattr(self, c) for c in KEY_COLUMNS + ("event_time",)}


@dataclass(frozen=True)
class StoredRecord:
    record_id: int
    keys: KeyFields
    document: Document
    inserted_at: float

    def to_dict(self) -> dict:
        return {"record_id": self.record_id, "keys": self.keys.to_dict(),
                "document": self.document, "inserted_at": self.inserted_at}

    @classmethod
    def from_dict(cls, d: dict) -> "StoredRecord":
        return cls(d["record_id"], KeyFields(**d["keys"]), d["document"], d["inserted_at"])


# -- JSON paths: $ then .member, ["member"] or [index] steps

_STEP = re.compile(r"""\.([^.\[\]=\s]+)|\[(\d+)\]|\["((?:[^"\\]|\\.)*)"\]""")
MISSING = object()
EXISTS = object()


def parse_json_path(path: str) -> tuple:
    path = path.strip()
    if not path.startswith("$"):
        raise JsonPathError(f"JSON path must start with '$': {path!r}")
    steps = []
    pos = 1
    while pos < len(path):
        m = _STEP.match(path, pos)
        if m is None:
            raise JsonPathError(f"malformed JSON path {path!r} at offset {pos}")
        name, index, quoted = m.groups()
        if index is not None:
            steps.append(int(index))
        elif quoted is not None:
            steps.append(json.loads(f'"{quoted}"'))
        else:
            steps.append(name)
        pos = m.end()
    return tuple(steps)


def resolve(doc: Any, steps: tuple) -> Any:
    cur = doc
    for step in steps:
        if isinstance(step, int):
            if not isinstance(cur, list) or step >= len(cur):
                return MISSING
        elif not isinstance(cur, dict) or step not in cur:
            return MISSING
        cur = cur[step]
    return cur


def _json_equal(a: Any, b: Any) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    return a == b


@dataclass(frozen=True)
class PathPredicate:
    steps: tuple
    expected: Any = EXISTS

    def test(self, doc: Any) -> bool:
        val = resolve(doc, self.steps)
        if val is MISSING:
            return False
        return self.expected is EXISTS or _json_equal(val, self.expected)


def parse_path_predicate(text: str) -> PathPredicate:
    """``$.a.b = value`` (value as JSON, else bare string) or ``$.a.b`` for existence."""
    path, sep, rhs = text.partition("=")
    steps = parse_json_path(path)
    if not sep:
        return PathPredicate(steps)
    rhs = rhs.strip()
    try:
        value = json.loads(rhs)
        if isinstance(value, (dict, list)):
            raise JsonPathError(f"expected a scalar, got {rhs!r}")
    except json.JSONDecodeError:
        value = rhs
    return PathPredicate(steps, value)


@dataclass
class QueryFilter:
    source: Optional[str] = None
    site: Optional[str] = None
    resource: Optional[str] = None
    service: Optional[str] = None
    kind: Optional[str] = None
    since: Optional[float] = None
    until: Optional[float] = None
    paths: list = field(default_factory=list)
    latest_only: bool = False
    limit: Optional[int] = None

    def __post_init__(self):
        self.paths = [parse_path_predicate(p) if isinstance(p, str) else p for p in self.paths]
        if not (self.equalities() or self.since is not None or self.until is not None
                or self.paths or self.latest_only or self.limit is not None):
            raise StoreError("query filter needs at least one predicate or a limit")
        if self.limit is not None and self.limit < 0:
            raise StoreError("limit must be >= 0")

    def equalities(self) -> dict:
        return {c: getattr(self, c) for c in KEY_COLUMNS if getattr(self, c) is not None}

    def accepts(self, rec: StoredRecord) -> bool:
        k = rec.keys
        for col, want in self.equalities().items():
            if getattr(k, col) != want:
                return False
        if self.since is not None and (k.event_time is None or k.event_time < self.since):
            return False
        if self.until is not None and (k.event_time is None or k.event_time >= self.until):
            return False
        return all(p.test(rec.document) for p in self.paths)


def latest_group(rec: StoredRecord) -> tuple:
    k = rec.keys
    return (k.source, k.site, k.resource, k.service, k.kind)


# -- key extraction


def _first(d: Any, *names) -> Any:
    for n in names:
        if isinstance(d, dict) and n in d:
            return d[n]
    return None


def _child(d: Any, local: str) -> Any:
    """First member whose name, ignoring any namespace prefix, is ``local``."""
    if isinstance(d, dict):
        for k, v in d.items():
            if k.rpartition(":")[2] == local:
                return v
    return {}


def _time(value: Any) -> Optional[float]:
    if value is None:
        return None
    try:
        return parse_timestamp(str(value))
    except NetLoggerError:
        return None


def extract_keys(document: Document, source: str) -> KeyFields:
    """Project the key columns out of a document. Never fails on missing fields."""
    d = document if isinstance(document, dict) else {}
    s = lambda v: "" if v is None else str(v)  # noqa: E731
    if source == "ganglia":
        h = d.get("host") or {}
        return KeyFields("ganglia", s(_first(h, "@site")), s(_first(h, "@name")), None,
                         "metrics", _time(_first(h, "@reported")))
    if source == "inca":
        r = _child(d, "report")
        return KeyFields("inca", s(_first(r, "site")), s(_first(r, "service")),
                         _first(r, "name"), "test", _time(_first(r, "gmt")))
    if source == "perfsonar":
        m = _child(d, "message")
        meta, data = _child(m, "metadata"), _child(m, "data")
        datum = _child(data, "datum")
        return KeyFields("perfsonar", s(_first(meta, "src")), s(_first(meta, "dst")), None,
                         "bandwidth", _time(_first(datum, "@timeValue")))
    if source == "snapp":
        return KeyFields("snapp", s(d.get("src")), s(d.get("link")), None, "traffic",
                         _time(d.get("ts")))
    if source == "netlogger":
        return KeyFields("netlogger", s(d.get("site")), s(d.get("component")),
                         d.get("experiment"), "event", _time(d.get("ts")))
    if source == "glue2":
        if "ComputingActivity" in d:
            a = d["ComputingActivity"] or {}
            state = _first(a, "State")
            if isinstance(state, list):
                state = state[-1] if state else None
            state = s(state).split(":")[-1]
            return KeyFields("glue2", s(_first(a, "Site")), s(_first(a, "Partition")),
                             _first(a, "LocalIDFromManager"),
                             f"job.{state}" if state else "job", _time(_first(a, "CreationTime")))
        for top, kind in (("ComputingService", "partition"), ("ComputingShare", "queue")):
            if top in d:
                a = d[top] or {}
                return KeyFields("glue2", s(_first(a, "Site")),
                                 s(_first(a, "Partition", "Name")), None, kind,
                                 _time(_first(a, "CreationTime")))
        return KeyFields("glue2", s(d.get("Site")), s(d.get("Name")), None, "config",
                         _time(d.get("CreationTime")))
    return KeyFields(source or "unknown", s(d.get("site")), s(d.get("resource")),
                     d.get("service"), s(d.get("kind")) or "document", _time(d.get("ts")))


class HybridStore:
    """In-memory record table with hash indexes on the key columns."""

    def __init__(self):
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self.records: dict[int, StoredRecord] = {}
        self._index: dict[str, dict[Any, set[int]]] = {c: {} for c in KEY_COLUMNS}
        self._latest: dict[tuple, int] = {}
        self.update_count = 0

    def __len__(self) -> int:
        return len(self.records)

    def _add(self, rec: StoredRecord) -> None:
        self.records[rec.record_id] = rec
        for c in KEY_COLUMNS:
            self._index[c].setdefault(getattr(rec.keys, c), set()).add(rec.record_id)

    def _remove(self, rid: int) -> None:
        rec = self.records.pop(rid)
        for c in KEY_COLUMNS:
            bucket = self._index[c][getattr(rec.keys, c)]
            bucket.discard(rid)
            if not bucket:
                del self._index[c][getattr(rec.keys, c)]

    def _check(self, document: Document) -> Document:
        return parse_document(canonical_json(document))

    def upsert_latest(self, document: Document, keys: KeyFields,
                      now: float | None = None) -> int:
        if not is_snapshot_kind(keys.kind):
            raise StoreError(f"{keys.kind!r} is a series kind; use append_series")
        doc = self._check(document)
        ts = time.time() if now is None else now
        with self._lock:
            rid = next(self._ids)
            old = self._latest.get(keys.snapshot_key)
            if old is not None:
                self._remove(old)
            self._add(StoredRecord(rid, keys, doc, ts))
            self._latest[keys.snapshot_key] = rid
            self.update_count += 1
            return rid

    def append_series(self, document: Document, keys: KeyFields,
                      now: float | None = None) -> int:
        if is_snapshot_kind(keys.kind):
            raise StoreError(f"{keys.kind!r} is a snapshot kind; use upsert_latest")
        doc = self._check(document)
        ts = time.time() if now is None else now
        with self._lock:
            rid = next(self._ids)
            self._add(StoredRecord(rid, keys, doc, ts))
            self.update_count += 1
            return rid

    def ingest(self, document: Document, source: str, now: float | None = None) -> int:
        """Extract keys and upsert or append according to the document kind."""
        keys = extract_keys(document, source)
        if is_snapshot_kind(keys.kind):
            return self.upsert_latest(document, keys, now)
        return self.append_series(document, keys, now)

    def _candidates(self, flt: QueryFilter) -> Iterable[int]:
        eq = flt.equalities()
        if not eq:
            return list(self.records)
        buckets = [self._index[c].get(v, set()) for c, v in eq.items()]
        buckets.sort(key=len)
        return buckets[0].intersection(*buckets[1:]) if len(buckets) > 1 else buckets[0]

    def query(self, flt: QueryFilter) -> list[StoredRecord]:
        """Matching records, newest (highest record id) first."""
        with self._lock:
            hits = [self.records[rid] for rid in self._candidates(flt)]
        hits = [r for r in hits if flt.accepts(r)]
        hits.sort(key=lambda r: r.record_id, reverse=True)
        if flt.latest_only:
            seen = set()
            kept = []
            for r in hits:
                g = latest_group(r)
                if g not in seen:
                    seen.add(g)
                    kept.append(r)
            hits = kept
        if flt.limit is not None:
            hits = hits[:flt.limit]
        return hits

    def get(self, record_id: int) -> StoredRecord | None:
        return self.records.get(record_id)

    def prune(self, retention: float, now: float | None = None) -> int:
        """Drop series records inserted at or before ``now - retention``."""
        cutoff = (time.time() if now is None else now) - retention
        with self._lock:
            doomed = [rid for rid, r in self.records.items()
                      if r.inserted_at <= cutoff and not is_snapshot_kind(r.keys.kind)]
            for rid in doomed:
                self._remove(rid)
            return len(doomed)

    # -- persistence

    def save(self, path) -> int:
        with self._lock:
            recs = sorted(self.records.values(), key=lambda r: r.record_id)
        with open(path, "w", encoding="utf-8") as fh:
            for r in recs:
                fh.write(canonical_json(r.to_dict()).decode("utf-8"))
                fh.write("\n")
        return len(recs)

    @classmethod
    def load(cls, path) -> "HybridStore":
        store = cls()
        top = 0
        with open(Path(path), encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = StoredRecord.from_dict(json.loads(line))
                except (ValueError, KeyError, TypeError) as exc:
                    raise StoreError(f"{path}:{lineno}: bad record: {exc}") from None
                if rec.record_id in store.records:
                    raise StoreError(f"{path}:{lineno}: duplicate record id {rec.record_id}")
                store._add(rec)
                if is_snapshot_kind(rec.keys.kind):
                    prev = store._latest.get(rec.keys.snapshot_key)
                    if prev is not None:
                        raise StoreError(f"{path}:{lineno}: second snapshot for "
                                         f"{rec.keys.snapshot_key}")
                    store._latest[rec.keys.snapshot_key] = rec.record_id
                top = max(top, rec.record_id)
        store._ids = itertools.count(top + 1)
        return store

    def __eq__(self, other):
        if not isinstance(other, HybridStore):
            return NotImplemented
        return self.records == other.records
