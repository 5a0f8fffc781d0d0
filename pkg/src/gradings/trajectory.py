"""Trajectory types, hour-of-week encoding, sliding-window segmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

HOURS_PER_WEEK = 168.0
SECONDS_PER_WEEK = 604800.0
# 1970-01-01 was a Thursday: 72 h after Monday 00:00.
_EPOCH_HOUR_OF_WEEK = 72.0
FEATURES_PER_POINT = 4
STD_FLOOR = 1e-8


class TrajectoryError(ValueError):
    """Invalid trajectory data or segmentation parameters."""


@dataclass(frozen=True)
class LocationPoint:
    lat: float
    lon: float
    timestamp: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise TrajectoryError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise TrajectoryError(f"longitude out of range: {self.lon}")
        if not math.isfinite(self.timestamp):
            raise TrajectoryError(f"non-finite timestamp: {self.timestamp}")


@dataclass(frozen=True)
class Trajectory:
    id: str
    points: tuple[LocationPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise TrajectoryError(f"trajectory {self.id!r} has no points")
        for i in range(1, len(self.points)):
            if self.points[i].timestamp <= self.points[i - 1].timestamp:
                raise TrajectoryError(
                    f"trajectory {self.id!r}: timestamps not strictly increasing at index {i}"
                )

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Segment:
    source_id: str
    start_index: int  # 1-based
    points: tuple[LocationPoint, ...]

    @property
    def window(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class StandardizerStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def hour_of_week(timestamp: float) -> float:
    """Fractional hours since the most recent Monday 00:00 UTC."""
    return (timestamp / 3600.0 + _EPOCH_HOUR_OF_WEEK) % HOURS_PER_WEEK


def encode_time(timestamp: float) -> tuple[float, float]:
    angle = 2.0 * math.pi * hour_of_week(timestamp) / HOURS_PER_WEEK
    return math.sin(angle), math.cos(angle)


def decode_time(sin_val: float, cos_val: float) -> float:
    """Hour of week recovered from its cyclic encoding, in [0, 168)."""
    angle = math.atan2(sin_val, cos_val) % (2.0 * math.pi)
    return angle * HOURS_PER_WEEK / (2.0 * math.pi)


def segment_trajectory(traj: Trajectory, window: int) -> list[Segment]:
    if window < 1:
        raise TrajectoryError(f"window must be >= 1, got {window}")
    n = len(traj.points)
    return [
        Segment(traj.id, i + 1, traj.points[i:i + window])
        for i in range(n - window + 1)
    ]


def flatten_segment(seg: Segment) -> np.ndarray:
    out = np.empty(FEATURES_PER_POINT * len(seg.points))
    for k, p in enumerate(seg.points):
        s, c = encode_time(p.timestamp)
        out[4 * k:4 * k + 4] = (p.lat, p.lon, s, c)
    return out


def unflatten_segment(v: np.ndarray, window: int) -> list[tuple[float, float, float]]:
    """Inverse of :func:`flatten_segment` up to week wrap: (lat, lon, hour_of_week)."""
    v = np.asarray(v, dtype=np.float64).reshape(window, FEATURES_PER_POINT)
    return [(float(r[0]), float(r[1]), decode_time(r[2], r[3])) for r in v]


def trajectory_features(traj: Trajectory, window: int) -> np.ndarray:
    """All flattened segments of ``traj`` as rows; shape (L - W + 1, 4W)."""
    if window < 1:
        raise TrajectoryError(f"window must be >= 1, got {window}")
    n = len(traj.points)
    if n < window:
        return np.empty((0, FEATURES_PER_POINT * window))
    per_point = np.array([(p.lat, p.lon, *encode_time(p.timestamp)) for p in traj.points])
    idx = np.arange(n - window + 1)[:, None] + np.arange(window)[None, :]
    return per_point[idx].reshape(n - window + 1, FEATURES_PER_POINT * window)


def fit_standardizer(train: Sequence[np.ndarray] | np.ndarray) -> StandardizerStats:
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise TrajectoryError("standardizer needs a non-empty 2-D training matrix")
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    const = np.ptp(x, axis=0) == 0
    mean[const] = x[0, const]
    std[const] = STD_FLOOR
    return StandardizerStats(mean, std)


def apply_standardizer(stats: StandardizerStats, v: np.ndarray) -> np.ndarray:
    return stats.apply(v)
