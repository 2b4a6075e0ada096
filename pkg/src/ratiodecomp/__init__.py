"""Additive decomposition of ratio-metric time series into feature contributions."""

__version__ = "0.1.0"
