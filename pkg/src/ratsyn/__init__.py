"""Data-driven robust controller synthesis for rational and liftable nonlinear systems."""

__version__ = "0.1.0"
