"""Attention-guided spatiotemporal frame sampling for video recognition."""

__version__ = "0.1.0"
