"""Minimum-time reachable sets, bang-bang synthesis and convexity certificates."""
__version__ = "0.1.0"
