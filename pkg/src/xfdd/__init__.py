"""Fault detection, identification and localization for multivariate sensor windows."""

__version__ = "0.1.0"
