"""Chip-firing aggregation models on lattices and trees."""

__version__ = "0.1.0"
