"""Numerics for fractional p(x, y)-Laplacian problems on boxes."""

__version__ = "0.1.0"
