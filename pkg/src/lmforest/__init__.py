"""Landmark random forests for competing-risks prediction."""

__version__ = "0.1.0"
