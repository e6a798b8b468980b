"""Differential annihilators, structural variability and extrapolation benchmarks for small MLPs."""

__version__ = "0.1.0"
