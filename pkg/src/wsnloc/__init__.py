"""Topology-partitioning localization for wireless sensor networks with obstacles."""

__version__ = "0.1.0"
