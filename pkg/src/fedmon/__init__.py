"""Federated monitoring information system: routing, broker, transformation, storage and workload emulation."""

__version__ = "0.1.0"
