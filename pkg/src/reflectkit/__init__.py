"""Reflection location perception, synthetic pairs, metrics and a toy removal cascade."""

__version__ = "0.1.0"
