"""Robustness of MDP values under small model errors, with learning companions."""
from __future__ import annotations

__version__ = "0.1.0"
