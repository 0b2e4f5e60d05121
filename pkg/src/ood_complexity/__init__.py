"""Complexity-compensated out-of-distribution scoring for 3x32x32 images."""

__version__ = "0.1.0"
