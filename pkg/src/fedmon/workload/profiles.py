"""Infrastructure profiles that drive the emulator."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

BUNDLED = ("futuregrid", "futuregridx2", "xsede", "xsedex2", "osg", "osgx2")

ROLE_COUNT_FIELDS = {
    "info_database": "info_databases",
    "web_portal": "web_portals",
    "accounting": "accounting_systems",
    "metascheduler": "metaschedulers",
    "monitoring": "monitoring_systems",
    "science_gateway": "science_gateways",
}


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class InfrastructureProfile:
    name: str
    partitions: int
    simultaneous_jobs: int
    jobs_per_hour: float
    services: int
    nodes: Optional[int] = None
    network_links: Optional[int] = None
    tests_per_service: float = 1.0
    inca_period_range: tuple[float, float] = (900.0, 7200.0)
    subscribers: dict = field(default_factory=dict)
    mean_message_bytes: int = 2048
    payload_bytes: dict = field(default_factory=dict)
    sites: tuple[str, ...] = ()
    adapters: tuple = ()

    def __post_init__(self):
        for f in ("partitions", "simultaneous_jobs", "jobs_per_hour", "services",
                  "nodes", "network_links", "tests_per_service", "mean_message_bytes"):
            v = getattr(self, f)
            if v is not None and v < 0:
                raise ProfileError(f"{f} must be >= 0, got {v}")
        lo, hi = self.inca_period_range
        if not 0 < lo <= hi:
            raise ProfileError(f"inca_period_range must be positive and ordered, got {lo, hi}")
        for role, count in self.subscribers.items():
            if role not in ROLE_COUNT_FIELDS.values():
                raise ProfileError(f"unknown subscriber role {role!r}")
            if count < 0:
                raise ProfileError(f"subscriber count {role} must be >= 0")
        for src, size in self.payload_bytes.items():
            if size < 0:
                raise ProfileError(f"payload_bytes[{src}] must be >= 0")

    @property
    def node_count(self) -> int:
        return self.nodes or 0

    @property
    def link_count(self) -> int:
        return self.network_links or 0

    def subscriber_count(self, role: str) -> int:
        return int(self.subscribers.get(ROLE_COUNT_FIELDS[role], 0))

    def site_names(self) -> tuple[str, ...]:
        if self.sites:
            return self.sites
        n = max(1, (self.partitions + 1) // 2)
        return tuple(f"site{i:03d}" for i in range(n))

    def scaled(self, factor: float, name: str | None = None) -> "InfrastructureProfile":
        """Every count multiplied by ``factor`` (per-service test mix unchanged)."""
        def mul(v):
            return None if v is None else v * factor
        return dataclasses.replace(
            self, name=name or f"{self.name}x{factor:g}",
            partitions=mul(self.partitions), simultaneous_jobs=mul(self.simultaneous_jobs),
            jobs_per_hour=mul(self.jobs_per_hour), services=mul(self.services),
            nodes=mul(self.nodes), network_links=mul(self.network_links),
            subscribers={k: v * factor for k, v in self.subscribers.items()})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["inca_period_range"] = list(self.inca_period_range)
        d["sites"] = list(self.sites)
        d["adapters"] = list(self.adapters)
        return d


_REQUIRED = ("name", "partitions", "simultaneous_jobs", "jobs_per_hour", "services")


def profile_from_dict(d: dict) -> InfrastructureProfile:
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise ProfileError(f"profile missing fields: {', '.join(missing)}")
    known = {f.name for f in dataclasses.fields(InfrastructureProfile)}
    unknown = set(d) - known
    if unknown:
        raise ProfileError(f"unknown profile fields: {', '.join(sorted(unknown))}")
    d = dict(d)
    if "inca_period_range" in d:
        rng = d["inca_period_range"]
        if not isinstance(rng, (list, tuple)) or len(rng) != 2:
            raise ProfileError("inca_period_range must be [low, high]")
        d["inca_period_range"] = (float(rng[0]), float(rng[1]))
    d["sites"] = tuple(d.get("sites") or ())
    d["adapters"] = tuple(d.get("adapters") or ())
    try:
        return InfrastructureProfile(**d)
    except TypeError as exc:
        raise ProfileError(str(exc)) from None


def load_profile(source) -> InfrastructureProfile:
    """Load a profile from a path, a bundled name, or an open file."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        p = Path(source)
        if p.suffix == "" and not p.exists() and str(source) in BUNDLED:
            text = resources.files("fedmon.workload").joinpath(
                f"profiles/{source}.json").read_text(encoding="utf-8")
        elif p.exists():
            text = p.read_text(encoding="utf-8")
        else:
            raise ProfileError(f"unknown profile {str(source)!r} "
                               f"(bundled: {', '.join(BUNDLED)})")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"profile is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ProfileError("profile must be a JSON object")
    return profile_from_dict(data)
