"""Temporal event detection with per-class query sets and bipartite matching."""

__version__ = "0.1.0"
