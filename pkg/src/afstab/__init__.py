"""Numerical laboratory for small-mass stability of asymptotically flat 3-metrics."""

__version__ = "0.1.0"
