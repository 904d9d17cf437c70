"""Distributed automatic modulation classification for cell-free RU/DU networks."""

__version__ = "0.1.0"
