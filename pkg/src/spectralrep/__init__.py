"""Finite-domain workbench for spectral representation learning objectives."""

__version__ = "0.1.0"
