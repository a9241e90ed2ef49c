"""Sparse-input radiance fields from a coordinate MLP fused with tensorial planes."""

__version__ = "0.1.0"
