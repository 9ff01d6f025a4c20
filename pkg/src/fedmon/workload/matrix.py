"""Subscriber roles and the subscription matrix."""

from __future__ import annotations

from dataclasses import dataclass

from ..core import RoutingKey, RoutingPattern, parse_pattern, pattern_matches
from .profiles import ROLE_COUNT_FIELDS, InfrastructureProfile
from .rates import stream_rates

GLUE2_SNAPSHOTS = ("glue2.*.*.partition", "glue2.*.*.queue")
GLUE2_JOBS = ("glue2.*.*.job.*",)


@dataclass(frozen=True)
class SubscriberRole:
    name: str
    patterns: tuple[RoutingPattern, ...]

    def __post_init__(self):
        if not self.patterns:
            raise ValueError(f"role {self.name!r} needs at least one pattern")

    def wants(self, key: RoutingKey) -> bool:
        return any(pattern_matches(p, key) for p in self.patterns)


def _role(name: str, *patterns: str) -> SubscriberRole:
    return SubscriberRole(name, tuple(parse_pattern(p) for p in patterns))


ROLES = {
    "info_database": _role("info_database", "#"),
    "web_portal": _role("web_portal", "#"),
    "accounting": _role("accounting", *GLUE2_JOBS),
    "metascheduler": _role("metascheduler", *GLUE2_SNAPSHOTS, *GLUE2_JOBS),
    "monitoring": _role("monitoring", "inca.#", "perfsonar.#", "snapp.#", "ganglia.#"),
    "science_gateway": _role("science_gateway", *GLUE2_SNAPSHOTS, *GLUE2_JOBS, "inca.#"),
}
assert set(ROLES) == set(ROLE_COUNT_FIELDS)

# A representative routing key per stream, for rate-weighted fan-out.
SAMPLE_KEYS = {
    "ganglia": RoutingKey(("ganglia", "site", "node", "metrics")),
    "snapp": RoutingKey(("snapp", "link00", "traffic")),
    "perfsonar": RoutingKey(("perfsonar", "site", "peer", "bandwidth")),
    "glue2.partition": RoutingKey(("glue2", "site", "part", "partition")),
    "glue2.queue": RoutingKey(("glue2", "site", "part", "queue")),
    "glue2.job": RoutingKey(("glue2", "site", "part", "job", "start")),
    "inca": RoutingKey(("inca", "site", "svc", "test")),
}


@dataclass(frozen=True)
class Subscription:
    role: SubscriberRole
    instance: int
    queue: str

    @property
    def patterns(self) -> tuple[RoutingPattern, ...]:
        return self.role.patterns


def build_subscription_matrix(profile: InfrastructureProfile,
                              extra: tuple[SubscriberRole, ...] = ()) -> list[Subscription]:
    """One queue per subscriber instance, in role order."""
    subs = []
    for name, role in ROLES.items():
        for i in range(int(profile.subscriber_count(name))):
            subs.append(Subscription(role, i, f"{name}.{i}"))
    for role in extra:
        subs.append(Subscription(role, 0, f"{role.name}.0"))
    return subs


def bind_matrix(broker, matrix: list[Subscription], exchange: str) -> None:
    for sub in matrix:
        for p in sub.patterns:
            broker.bind(sub.queue, exchange, p)


def fanout(key: RoutingKey, matrix: list[Subscription]) -> int:
    """Number of subscriber queues that receive a message tagged ``key``."""
    return sum(1 for s in matrix if s.role.wants(key))


def expected_fanout(profile: InfrastructureProfile, matrix: list[Subscription]) -> float:
    """Rate-weighted mean fan-out over the profile's streams."""
    rates = dict(stream_rates(profile))
    snap = rates.pop("glue2.snapshot")
    rates["glue2.partition"] = rates["glue2.queue"] = snap / 2
    total = sum(rates.values())
    if total == 0:
        return 0.0
    return sum(r * fanout(SAMPLE_KEYS[s], matrix) for s, r in rates.items()) / total
