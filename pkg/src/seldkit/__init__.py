"""Spatial sound scene synthesis, SELD features and SELD metrics."""

__version__ = "0.1.0"
