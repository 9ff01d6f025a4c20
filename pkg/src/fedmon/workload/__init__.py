"""Emulated infrastructures: profiles, schedules, subscribers and benchmarks."""

from .emulate import EmulationError, EmulationReport, SourceRow, StoreSummary, run_emulation
from .generators import DocumentFactory, Event, build_topology, pad_document, schedule
from .matrix import ROLES, SubscriberRole, build_subscription_matrix, expected_fanout, fanout
from .profiles import BUNDLED, InfrastructureProfile, ProfileError, load_profile
from .rates import capacity_headroom, expected_publish_rate, payload_plan, stream_rates

__all__ = [
    "BUNDLED", "DocumentFactory", "EmulationError", "EmulationReport", "Event",
    "InfrastructureProfile", "ProfileError", "ROLES", "SourceRow", "StoreSummary",
    "SubscriberRole", "build_subscription_matrix", "build_topology", "capacity_headroom",
    "expected_fanout", "expected_publish_rate", "fanout", "load_profile", "pad_document",
    "payload_plan", "run_emulation", "schedule", "stream_rates",
]
