"""Synthetic monitoring sources.

Record builders imitate the native shape of each tool (XML for Ganglia,
Inca and perfSONAR; JSON for SNAPP and GLUE2; key=value lines for
NetLogger). All content is a pure function of the arguments plus a seeded
RNG, so the same seed always yields the same byte stream.
"""

from __future__ import annotations

import hashlib
import math
import random
from collections import Counter
from datetime import datetime, timezone
from xml.sax.saxutils import quoteattr, escape

from ..core import Document, RoutingKey, parse_routing_key
from .netlogger import json_to_netlogger, netlogger_to_json
from .xmljson import xml_to_json

# 2013-05-01T00:00:00Z; emulated documents are stamped relative to this.
EPOCH_BASE = 1367366400.0

SOURCE_KINDS = ("ganglia", "inca", "perfsonar", "snapp", "netlogger", "glue2")

GANGLIA_METRICS = (
    ("load_one", ""), ("load_five", ""), ("load_fifteen", ""), ("cpu_user", "%"),
    ("cpu_system", "%"), ("cpu_idle", "%"), ("cpu_nice", "%"), ("cpu_wio", "%"),
    ("cpu_aidle", "%"), ("cpu_steal", "%"), ("cpu_intr", "%"), ("cpu_sintr", "%"),
    ("cpu_num", "CPUs"), ("cpu_speed", "MHz"), ("mem_total", "KB"), ("mem_free", "KB"),
    ("mem_shared", "KB"), ("mem_buffers", "KB"), ("mem_cached", "KB"), ("swap_total", "KB"),
    ("swap_free", "KB"), ("bytes_in", "bytes/sec"), ("bytes_out", "bytes/sec"),
    ("pkts_in", "packets/sec"), ("pkts_out", "packets/sec"), ("disk_total", "GB"),
    ("disk_free", "GB"), ("part_max_used", "%"), ("proc_run", ""), ("proc_total", ""),
    ("boottime", "s"), ("heartbeat", ""), ("mtu", "B"), ("machine_type", ""),
    ("os_name", ""), ("os_release", ""), ("gexec", ""),
)
assert len(GANGLIA_METRICS) == 37

INCA_NS = "http://inca.sdsc.edu/dataModel/report_2.1"
NMWG_NS = "http://ggf.org/ns/nmwg/base/2.0/"


def seeded_rng(*parts) -> random.Random:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def iso(t: float) -> str:
    return datetime.fromtimestamp(t, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def token(text: str) -> str:
    """Make ``text`` usable as one routing-key word."""
    out = "".join("_" if (c in ".*#" or c.isspace()) else c for c in text)
    return out or "_"


# -- record builders


def ganglia_record(site: str, node: str, t: float, rng: random.Random) -> str:
    vals = []
    for name, units in GANGLIA_METRICS:
        if name == "os_name":
            v = "Linux"
        elif name == "os_release":
            v = "2.6.32-358.el6.x86_64"
        elif name == "machine_type":
            v = "x86_64"
        elif name == "gexec":
            v = "OFF"
        elif name.startswith("cpu_") and units == "%":
            v = f"{rng.uniform(0, 100):.1f}"
        elif name.startswith("load"):
            v = f"{rng.uniform(0, 8):.2f}"
        else:
            v = str(rng.randrange(0, 1 << 24))
        attrs = f"name={quoteattr(name)} val={quoteattr(v)}"
        if units:
            attrs += f" units={quoteattr(units)}"
        vals.append(f"<metric {attrs}/>")
    return (f"<host name={quoteattr(node)} site={quoteattr(site)} "
            f"reported=\"{int(t)}\">" + "".join(vals) + "</host>")


def inca_record(site: str, service: str, test: str, t: float, rng: random.Random) -> str:
    passed = rng.random() > 0.05
    err = "" if passed else f"<errorMessage>{escape('test failed: timeout')}</errorMessage>"
    return (
        f'<rep:report xmlns:rep="{INCA_NS}">'
        f"<gmt>{iso(t)}</gmt><hostname>{escape(service)}.{escape(site)}.futuregrid.org</hostname>"
        f"<site>{escape(site)}</site><service>{escape(service)}</service>"
        f"<name>{escape(test)}</name><version>1.{rng.randrange(10)}</version>"
        f"<body><elapsed units=\"s\">{rng.uniform(0.1, 30):.2f}</elapsed></body>"
        f"<exitStatus><completed>{'true' if passed else 'false'}</completed>{err}</exitStatus>"
        f"</rep:report>"
    )


def perfsonar_record(src: str, dst: str, t: float, rng: random.Random) -> str:
    return (
        f'<nmwg:message xmlns:nmwg="{NMWG_NS}" type="SetupDataResponse">'
        f'<nmwg:metadata id="meta.{escape(src)}.{escape(dst)}">'
        f"<src>{escape(src)}</src><dst>{escape(dst)}</dst>"
        f"<eventType>http://ggf.org/ns/nmwg/tools/iperf/2.0</eventType></nmwg:metadata>"
        f'<nmwg:data metadataIdRef="meta.{escape(src)}.{escape(dst)}">'
        f'<nmwg:datum timeValue="{int(t)}" throughput="{rng.uniform(1e8, 9.5e9):.4e}" '
        f'duration="20"/></nmwg:data></nmwg:message>'
    )


def snapp_record(link: str, src: str, dst: str, t: float, rng: random.Random) -> dict:
    return {
        "link": link, "src": src, "dst": dst, "ts": int(t), "interval": 10,
        "in_bps": rng.randrange(0, 10**10), "out_bps": rng.randrange(0, 10**10),
        "in_pps": rng.randrange(0, 10**6), "out_pps": rng.randrange(0, 10**6),
        "in_errors": rng.randrange(0, 3), "out_errors": rng.randrange(0, 3),
    }


def glue2_partition_record(site: str, partition: str, t: float, running: int,
                           waiting: int, rng: random.Random) -> dict:
    cpus = 8 * rng.randrange(64, 512)
    return {"ComputingService": {
        "ID": f"urn:glue2:ComputingService:{partition}.{site}",
        "Name": partition, "Site": site, "Partition": partition,
        "CreationTime": iso(t), "Type": "ipf.SLURM", "QualityLevel": "production",
        "TotalJobs": running + waiting, "RunningJobs": running, "WaitingJobs": waiting,
        "TotalCPUs": cpus, "UsedCPUs": min(cpus, running * 8),
    }}


def glue2_queue_record(site: str, partition: str, t: float, job_ids: list[str],
                       running: int) -> dict:
    return {"ComputingShare": {
        "ID": f"urn:glue2:ComputingShare:batch.{partition}.{site}",
        "Name": "batch", "Site": site, "Partition": partition, "CreationTime": iso(t),
        "RunningJobs": running, "WaitingJobs": len(job_ids) - running,
        "Activity": job_ids,
    }}


def glue2_job_record(site: str, partition: str, job_id: str, state: str, t: float,
                     rng: random.Random) -> dict:
    return {"ComputingActivity": {
        "ID": f"urn:glue2:ComputingActivity:{job_id}.{partition}.{site}",
        "LocalIDFromManager": job_id, "Site": site, "Partition": partition,
        "Queue": "batch", "State": [f"ipf:{state}"], "CreationTime": iso(t),
        "Owner": f"user{rng.randrange(500)}", "RequestedSlots": 2 ** rng.randrange(0, 8),
        "RequestedWallTime": 60 * rng.randrange(10, 2880),
    }}


def netlogger_record(experiment: str, component: str, event: str, t: float,
                     rng: random.Random) -> str:
    return json_to_netlogger({
        "ts": iso(t), "event": event, "level": "INFO", "experiment": experiment,
        "component": component, "dur": f"{rng.uniform(0, 5):.3f}",
    })


# -- raw record -> document, routing keys


def transform(kind: str, raw) -> Document:
    if kind in ("ganglia", "inca", "perfsonar"):
        return xml_to_json(raw)
    if kind == "netlogger":
        return netlogger_to_json(raw)
    if kind in ("snapp", "glue2"):
        return raw
    raise ValueError(f"unknown source kind {kind!r}")


def glue2_key(site: str, partition: str, what: str, state: str | None = None) -> RoutingKey:
    words = ["glue2", token(site), token(partition), what]
    if state:
        words.append(state)
    return RoutingKey(tuple(words))


def netlogger_key(experiment: str, component: str, event: str) -> RoutingKey:
    return parse_routing_key(".".join(["netlogger", token(experiment), token(component)]
                                      + [token(w) for w in event.split(".")]))


# -- sources that an adapter can poll


class SyntheticSource:
    """Entities whose records change once per ``period`` (random phase).

    ``touch`` forces a change regardless of time; ``fail`` makes the next
    extraction raise, imitating an unreachable tool.
    """

    kind = ""

    def __init__(self, site: str, entities: list[str], period: float, seed: int = 0):
        if period <= 0:
            raise ValueError("period must be positive")
        self.site = site
        self.entities = list(entities)
        self.seed = seed
        self.period = period
        self._touched: Counter = Counter()
        self.fail_next = False

    def phase(self, entity: str) -> float:
        return seeded_rng(self.seed, self.kind, entity, "phase").uniform(0, self.period_of(entity))

    def period_of(self, entity: str) -> float:
        return self.period

    def epoch(self, entity: str, now: float) -> int:
        return math.floor((now + self.phase(entity)) / self.period_of(entity))

    def touch(self, *entities: str) -> None:
        for e in entities:
            self._touched[e] += 1

    def extract(self, now: float) -> dict[str, object]:
        if self.fail_next:
            self.fail_next = False
            raise ConnectionError(f"{self.kind} source at {self.site} unreachable")
        out = {}
        for e in self.entities:
            k = self.epoch(e, now)
            t = EPOCH_BASE + k * self.period_of(e) - self.phase(e)
            rng = seeded_rng(self.seed, self.kind, e, k, self._touched[e])
            out[e] = self.record(e, t, rng)
        return out

    def record(self, entity: str, t: float, rng: random.Random):
        raise NotImplementedError

    def routing_key(self, entity: str, raw) -> RoutingKey:
        raise NotImplementedError

    def transform(self, raw) -> Document:
        return transform(self.kind, raw)


class GangliaSource(SyntheticSource):
    kind = "ganglia"

    def __init__(self, site: str, nodes: int, period: float = 15.0, seed: int = 0):
        super().__init__(site, [f"{site}-n{i:04d}" for i in range(nodes)], period, seed)

    def record(self, entity, t, rng):
        return ganglia_record(self.site, entity, t, rng)

    def routing_key(self, entity, raw):
        return RoutingKey(("ganglia", token(self.site), token(entity), "metrics"))


class IncaSource(SyntheticSource):
    kind = "inca"

    def __init__(self, site: str, services: int, tests_per_service: int = 3,
                 period_range: tuple[float, float] = (900.0, 7200.0), seed: int = 0):
        ents = [f"svc{s:03d}/t{k:02d}" for s in range(services) for k in range(tests_per_service)]
        self.period_range = period_range
        super().__init__(site, ents, (period_range[0] + period_range[1]) / 2, seed)

    def period_of(self, entity):
        return seeded_rng(self.seed, self.kind, entity, "period").uniform(*self.period_range)

    def record(self, entity, t, rng):
        service, test = entity.split("/")
        return inca_record(self.site, service, test, t, rng)

    def routing_key(self, entity, raw):
        service, test = entity.split("/")
        return RoutingKey(("inca", token(self.site), token(service), token(test)))


class PerfsonarSource(SyntheticSource):
    kind = "perfsonar"

    def __init__(self, site: str, peers: list[str], period: float = 7200.0, seed: int = 0):
        super().__init__(site, list(peers), period, seed)

    def record(self, entity, t, rng):
        return perfsonar_record(self.site, entity, t, rng)

    def routing_key(self, entity, raw):
        return RoutingKey(("perfsonar", token(self.site), token(entity), "bandwidth"))


class SnappSource(SyntheticSource):
    kind = "snapp"

    def __init__(self, site: str, links: int, period: float = 10.0, seed: int = 0):
        super().__init__(site, [f"link{i:02d}" for i in range(links)], period, seed)

    def record(self, entity, t, rng):
        return snapp_record(entity, self.site, f"peer{entity[4:]}", t, rng)

    def routing_key(self, entity, raw):
        return RoutingKey(("snapp", token(entity), "traffic"))


class Glue2Source(SyntheticSource):
    """Partition and queue snapshots for each partition at one site."""

    kind = "glue2"

    def __init__(self, site: str, partitions: int, period: float = 120.0, seed: int = 0):
        ents = [f"{site}-p{i}/{what}" for i in range(partitions) for what in ("partition", "queue")]
        super().__init__(site, ents, period, seed)

    def record(self, entity, t, rng):
        partition, what = entity.split("/")
        running, waiting = rng.randrange(0, 60), rng.randrange(0, 20)
        if what == "partition":
            return glue2_partition_record(self.site, partition, t, running, waiting, rng)
        jobs = [f"{rng.randrange(10**6)}" for _ in range(running + waiting)]
        return glue2_queue_record(self.site, partition, t, jobs, running)

    def routing_key(self, entity, raw):
        partition, what = entity.split("/")
        return glue2_key(self.site, partition, what)


class NetLoggerSource(SyntheticSource):
    """User-instrumented components; each revision logs one new event."""

    kind = "netlogger"

    def __init__(self, site: str, components: list[str], experiment: str = "exp1",
                 period: float = 5.0, seed: int = 0):
        self.experiment = experiment
        super().__init__(site, list(components), period, seed)

    def record(self, entity, t, rng):
        event = rng.choice(("vm.start", "vm.stop", "transfer.end", "stage.done"))
        return netlogger_record(self.experiment, entity, event, t, rng)

    def routing_key(self, entity, raw):
        return netlogger_key(self.experiment, entity, netlogger_to_json(raw)["event"])


def make_source(kind: str, site: str, count: int, seed: int = 0, period: float | None = None,
                **kw) -> SyntheticSource:
    """Source factory used by adapter configuration blocks."""
    extra = {} if period is None else {"period": period}
    if kind == "ganglia":
        return GangliaSource(site, count, seed=seed, **extra)
    if kind == "inca":
        return IncaSource(site, count, kw.get("tests_per_service", 3),
                          tuple(kw.get("period_range", (900.0, 7200.0))), seed=seed)
    if kind == "perfsonar":
        return PerfsonarSource(site, [f"peer{i:02d}" for i in range(count)], seed=seed, **extra)
    if kind == "snapp":
        return SnappSource(site, count, seed=seed, **extra)
    if kind == "glue2":
        return Glue2Source(site, count, seed=seed, **extra)
    if kind == "netlogger":
        return NetLoggerSource(site, [f"comp{i}" for i in range(count)], seed=seed, **extra)
    raise ValueError(f"unknown source kind {kind!r}")


def dump_source(source: SyntheticSource, directory, now: float) -> list:
    """Write every entity's current raw record to ``directory``.

    Extensions follow the native format: ``.xml``, ``.log`` or ``.json``.
    """
    import json
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ext = {"ganglia": ".xml", "inca": ".xml", "perfsonar": ".xml",
           "netlogger": ".log", "snapp": ".json", "glue2": ".json"}[source.kind]
    paths = []
    for eid, raw in source.extract(now).items():
        p = out / f"{source.kind}_{token(eid).replace('/', '_')}{ext}"
        p.write_text(json.dumps(raw, indent=1) if ext == ".json" else raw + "\n",
                     encoding="utf-8")
        paths.append(p)
    return paths
