"""Deterministic event schedule and document factory for an emulated infrastructure.

Periodic snapshot sources fire every period from a uniform random phase.
Inca tests are renewal processes with uniform inter-run times, started in
equilibrium. Jobs arrive as a Poisson process; each emits submit, start and
end. Delays are exponential with mean residence ``simultaneous_jobs /
arrival_rate`` split 10% queued and 90% running, and the run starts with a
steady-state population already in the system so start/end rates are
stationary from t=0.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass
from typing import Iterator

from ..core import Document, RoutingKey, canonical_json
from ..xform import sources as src
from .profiles import InfrastructureProfile
from .rates import (GANGLIA_PERIOD, GLUE2_SNAPSHOT_PERIOD, PERFSONAR_PERIOD, SNAPP_PERIOD,
                    inca_test_count, payload_plan)

QUEUED_SHARE = 0.1
PAD_KEY = "_pad"


@dataclass(frozen=True, order=True)
class Event:
    t: float
    seq: int
    stream: str
    entity: tuple


@dataclass(frozen=True)
class Topology:
    nodes: tuple            # (site, node)
    links: tuple            # (link, src_site, dst_site)
    partitions: tuple       # (site, partition)
    tests: tuple            # (site, service, test)


def build_topology(profile: InfrastructureProfile) -> Topology:
    sites = profile.site_names()
    ns = len(sites)
    nodes = tuple((sites[i % ns], f"{sites[i % ns]}-n{i:05d}") for i in range(profile.node_count))
    links = tuple((f"link{i:02d}", sites[i % ns], sites[(i + 1) % ns])
                  for i in range(profile.link_count))
    parts = tuple((sites[i % ns], f"{sites[i % ns]}-p{i}") for i in range(int(profile.partitions)))
    n_tests = int(round(inca_test_count(profile)))
    n_services = max(1, int(profile.services))
    tests = tuple((sites[(i % n_services) % ns], f"svc{i % n_services:04d}", f"t{i // n_services:02d}")
                  for i in range(n_tests))
    return Topology(nodes, links, parts, tests)


def _periodic(rng: random.Random, stream: str, entities, period: float,
              duration: float) -> Iterator[tuple[float, str, tuple]]:
    heap = [(rng.uniform(0, period), i) for i in range(len(entities))]
    heapq.heapify(heap)
    while heap and heap[0][0] < duration:
        t, i = heapq.heappop(heap)
        yield t, stream, entities[i]
        heapq.heappush(heap, (t + period, i))


def _renewal(rng: random.Random, stream: str, entities, lo: float, hi: float,
             duration: float) -> Iterator[tuple[float, str, tuple]]:
    # equilibrium start: length-biased first interval, uniform position in it
    heap = []
    for i in range(len(entities)):
        biased = math.sqrt(lo * lo + rng.random() * (hi * hi - lo * lo))
        heap.append((rng.random() * biased, i))
    heapq.heapify(heap)
    while heap and heap[0][0] < duration:
        t, i = heapq.heappop(heap)
        yield t, stream, entities[i]
        heapq.heappush(heap, (t + rng.uniform(lo, hi), i))


def _jobs(rng: random.Random, profile: InfrastructureProfile, parts, duration: float
          ) -> Iterator[tuple[float, str, tuple]]:
    lam = profile.jobs_per_hour / 3600.0
    if lam <= 0 or not parts:
        return
    residence = profile.simultaneous_jobs / lam
    mean_wait = QUEUED_SHARE * residence
    mean_run = (1 - QUEUED_SHARE) * residence

    def exp(mean):
        return rng.expovariate(1.0 / mean) if mean > 0 else 0.0

    heap: list = []
    ids = itertools.count()
    n_queued = int(round(QUEUED_SHARE * profile.simultaneous_jobs))
    n_running = int(round(profile.simultaneous_jobs)) - n_queued
    for _ in range(n_queued):
        jid, part = next(ids), rng.randrange(len(parts))
        start = exp(mean_wait)
        heapq.heappush(heap, (start, jid, part, "start", start + exp(mean_run)))
    for _ in range(n_running):
        jid, part = next(ids), rng.randrange(len(parts))
        heapq.heappush(heap, (exp(mean_run), jid, part, "end", None))
    next_arrival = exp(1.0 / lam)
    while True:
        t_job = heap[0][0] if heap else math.inf
        if next_arrival <= t_job:
            if next_arrival >= duration:
                return
            t, jid, part = next_arrival, next(ids), rng.randrange(len(parts))
            yield t, "glue2.job", (*parts[part], f"{jid}", "submit")
            start = t + exp(mean_wait)
            heapq.heappush(heap, (start, jid, part, "start", start + exp(mean_run)))
            next_arrival = t + exp(1.0 / lam)
        else:
            if t_job >= duration:
                return
            t, jid, part, state, end = heapq.heappop(heap)
            yield t, "glue2.job", (*parts[part], f"{jid}", state)
            if state == "start":
                heapq.heappush(heap, (end, jid, part, "end", None))


def schedule(profile: InfrastructureProfile, duration: float, seed: int = 0,
             topology: Topology | None = None) -> Iterator[Event]:
    """All publication events in ``[0, duration)`` in time order."""
    topo = topology or build_topology(profile)
    snaps = tuple((site, part, what) for site, part in topo.partitions
                  for what in ("partition", "queue"))
    lo, hi = profile.inca_period_range
    gens = [
        _periodic(src.seeded_rng(seed, "ganglia"), "ganglia", topo.nodes, GANGLIA_PERIOD, duration),
        _periodic(src.seeded_rng(seed, "snapp"), "snapp", topo.links, SNAPP_PERIOD, duration),
        _periodic(src.seeded_rng(seed, "perfsonar"), "perfsonar", topo.links,
                  PERFSONAR_PERIOD, duration),
        _periodic(src.seeded_rng(seed, "glue2.snapshot"), "glue2.snapshot", snaps,
                  GLUE2_SNAPSHOT_PERIOD, duration),
        _jobs(src.seeded_rng(seed, "glue2.job"), profile, topo.partitions, duration),
        _renewal(src.seeded_rng(seed, "inca"), "inca", topo.tests, lo, hi, duration),
    ]
    for seq, (t, stream, entity) in enumerate(heapq.merge(*gens, key=lambda e: e[0])):
        yield Event(t, seq, stream, entity)


def pad_document(doc: Document, target: int) -> Document:
    """Add filler so the canonical serialization is ``target`` bytes (never shrinks)."""
    if not isinstance(doc, dict):
        return doc
    base = dict(doc)
    base[PAD_KEY] = ""
    short = target - len(canonical_json(base))
    if short <= 0:
        return doc
    base[PAD_KEY] = "x" * short
    return base


class DocumentFactory:
    """Turns schedule events into (stream class, routing key, document)."""

    def __init__(self, profile: InfrastructureProfile, seed: int = 0):
        self.profile = profile
        self.seed = seed
        self.plan = payload_plan(profile)
        parts = max(1, int(profile.partitions))
        self.jobs_per_partition = int(round(profile.simultaneous_jobs / parts))

    def build(self, ev: Event) -> tuple[str, RoutingKey, Document]:
        rng = src.seeded_rng(self.seed, ev.stream, ev.entity, ev.seq)
        t = src.EPOCH_BASE + ev.t
        s = ev.stream
        if s == "ganglia":
            site, node = ev.entity
            cls = "ganglia"
            key = RoutingKey(("ganglia", src.token(site), src.token(node), "metrics"))
            doc = src.transform("ganglia", src.ganglia_record(site, node, t, rng))
        elif s == "snapp":
            link, a, b = ev.entity
            cls = "snapp"
            key = RoutingKey(("snapp", src.token(link), "traffic"))
            doc = src.snapp_record(link, a, b, t, rng)
        elif s == "perfsonar":
            link, a, b = ev.entity
            cls = "perfsonar"
            key = RoutingKey(("perfsonar", src.token(a), src.token(b), "bandwidth"))
            doc = src.transform("perfsonar", src.perfsonar_record(a, b, t, rng))
        elif s == "glue2.snapshot":
            site, part, what = ev.entity
            cls = f"glue2.{what}"
            key = src.glue2_key(site, part, what)
            n = self.jobs_per_partition
            running = int(round(n * (1 - QUEUED_SHARE)))
            if what == "partition":
                doc = src.glue2_partition_record(site, part, t, running, n - running, rng)
            else:
                jobs = [str(rng.randrange(10**7)) for _ in range(n)]
                doc = src.glue2_queue_record(site, part, t, jobs, running)
        elif s == "glue2.job":
            site, part, jid, state = ev.entity
            cls = "glue2.job"
            key = src.glue2_key(site, part, "job", state)
            doc = src.glue2_job_record(site, part, jid, state, t, rng)
        elif s == "inca":
            site, service, test = ev.entity
            cls = "inca"
            key = RoutingKey(("inca", src.token(site), src.token(service), src.token(test)))
            doc = src.transform("inca", src.inca_record(site, service, test, t, rng))
        else:
            raise ValueError(f"unknown stream {s!r}")
        return cls, key, pad_document(doc, self.plan.get(cls, 0))


def source_of(key: RoutingKey) -> str:
    return key.words[0]
