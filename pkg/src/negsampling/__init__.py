"""Negative sampling for multiclass losses: samplers, weights, implied margins and a training harness."""

__version__ = "0.1.0"
