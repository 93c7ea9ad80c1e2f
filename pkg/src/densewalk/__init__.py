"""Witness paths through 1-dense point sets with bounded step discrepancy."""

__version__ = "0.1.0"
