"""Radiance-field render-and-compare 6D pose estimation toolkit."""

__version__ = "0.1.0"
