"""Deterministic network-incident arena for benchmarking diagnostic agents."""

__version__ = "0.1.0"
