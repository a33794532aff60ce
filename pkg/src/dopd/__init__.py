"""Consensus-based distributed online primal-dual optimization with coupled constraints."""

from __future__ import annotations

__version__ = "0.1.0"
