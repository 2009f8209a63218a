"""Obstacle detection from boundary wave measurements with the boundary control method."""

__version__ = "0.1.0"
