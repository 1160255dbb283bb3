"""Stabilized unfitted space-time finite elements on moving domains."""

__version__ = "0.1.0"
