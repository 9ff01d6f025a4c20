"""Closed-form publish rates, payload sizing and capacity headroom."""

from __future__ import annotations

from .profiles import InfrastructureProfile

GANGLIA_PERIOD = 15.0
SNAPP_PERIOD = 10.0
PERFSONAR_PERIOD = 7200.0
GLUE2_SNAPSHOT_PERIOD = 120.0
JOB_STATES = ("submit", "start", "end")
QUEUE_DOC_BASE = 1024
QUEUE_DOC_PER_JOB = 120

STREAMS = ("ganglia", "snapp", "perfsonar", "glue2.snapshot", "glue2.job", "inca")


def inca_test_count(profile: InfrastructureProfile) -> float:
    return profile.services * profile.tests_per_service


def mean_inca_period(profile: InfrastructureProfile) -> float:
    lo, hi = profile.inca_period_range
    return (lo + hi) / 2.0


def stream_rates(profile: InfrastructureProfile) -> dict[str, float]:
    """Expected messages per second for each stream."""
    return {
        "ganglia": profile.node_count / GANGLIA_PERIOD,
        "snapp": profile.link_count / SNAPP_PERIOD,
        "perfsonar": profile.link_count / PERFSONAR_PERIOD,
        "glue2.snapshot": 2 * profile.partitions / GLUE2_SNAPSHOT_PERIOD,
        "glue2.job": len(JOB_STATES) * profile.jobs_per_hour / 3600.0,
        "inca": inca_test_count(profile) / mean_inca_period(profile),
    }


def expected_publish_rate(profile: InfrastructureProfile) -> float:
    return sum(stream_rates(profile).values())


def queue_document_bytes(profile: InfrastructureProfile) -> int:
    per_partition = profile.simultaneous_jobs / profile.partitions if profile.partitions else 0
    return int(round(QUEUE_DOC_BASE + QUEUE_DOC_PER_JOB * per_partition))


def payload_plan(profile: InfrastructureProfile) -> dict[str, int]:
    """Target serialized size per document class.

    Queue snapshots grow with jobs per partition; every other class gets one
    common size chosen so the rate-weighted mean equals
    ``profile.mean_message_bytes``. Explicit ``payload_bytes`` entries win.
    """
    rates = stream_rates(profile)
    total = sum(rates.values())
    r_queue = profile.partitions / GLUE2_SNAPSHOT_PERIOD
    q = queue_document_bytes(profile)
    rest = total - r_queue
    if rest > 0:
        common = (profile.mean_message_bytes * total - r_queue * q) / rest
    else:
        common = profile.mean_message_bytes
    common = max(0, int(round(common)))
    plan = {s: common for s in STREAMS}
    plan["glue2.partition"] = common
    plan["glue2.queue"] = q
    del plan["glue2.snapshot"]
    plan.update(profile.payload_bytes)
    return plan


def capacity_headroom(delivered_rate: float, capacity_rate: float) -> float:
    """Fraction of messaging capacity left free, clamped to [0, 1]."""
    if capacity_rate <= 0:
        raise ValueError("capacity must be positive")
    return min(1.0, max(0.0, 1.0 - delivered_rate / capacity_rate))
