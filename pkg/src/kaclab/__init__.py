"""Kac system-plus-reservoir laboratory: sum rule, series, particles, bounds."""
__version__ = "0.1.0"
