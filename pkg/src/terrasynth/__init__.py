"""Synthetic aerial imagery from orbital terrain models."""

__version__ = "0.1.0"
