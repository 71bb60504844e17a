"""Functional and performance simulator for a feature-map-stationary binary-weight CNN accelerator."""

__version__ = "0.1.0"
