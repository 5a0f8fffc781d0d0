"""Trajectory anomaly detection with segment-wise normalizing flows."""

__version__ = "0.1.0"
