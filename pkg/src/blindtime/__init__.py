"""Blind-time 3D object detection from LiDAR, proposals and event streams."""

__version__ = "0.1.0"
