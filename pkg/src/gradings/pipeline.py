"""Segment scoring, trajectory-level aggregation and threshold decisions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .trajectory import (
    Segment,
    StandardizerStats,
    Trajectory,
    flatten_segment,
    trajectory_features,
)

AGGREGATIONS = ("median", "average")


class ConfigurationError(ValueError):
    """Model, window and standardizer do not fit together."""


class TrajectoryTooShort(ValueError):
    pass


class AnomalyScorer(Protocol):
    """Anything with a batch ``score``; higher means more anomalous."""

    dim: int

    def score(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ScoredTrajectory:
    trajectory_id: str
    segment_scores: tuple[float, ...]
    score: float
    aggregation: str

    @property
    def n_segments(self) -> int:
        return len(self.segment_scores)


def _check_dim(model: AnomalyScorer, stats: StandardizerStats, dim: int) -> None:
    if model.dim != dim or stats.dim != dim:
        raise ConfigurationError(
            f"feature dimension {dim} does not match model ({model.dim}) / standardizer ({stats.dim})")


def score_features(model: AnomalyScorer, features: np.ndarray, stats: StandardizerStats) -> np.ndarray:
    """Scores of raw (unstandardized) flattened segments, one per row."""
    features = np.atleast_2d(features)
    _check_dim(model, stats, features.shape[1])
    return np.asarray(model.score(stats.apply(features)), dtype=np.float64)


def segment_score(model: AnomalyScorer, seg: Segment, stats: StandardizerStats) -> float:
    return float(score_features(model, flatten_segment(seg)[None, :], stats)[0])


def aggregate(scores: Sequence[float], kind: str) -> float:
    if len(scores) == 0:
        raise ValueError("cannot aggregate an empty score list")
    if kind == "median":
        return float(np.median(scores))
    if kind == "average":
        return float(np.mean(scores))
    raise ValueError(f"unknown aggregation {kind!r}")


def decide(score: float, threshold: float) -> str:
    return "abnormal" if score >= threshold else "normal"


def score_trajectory(model: AnomalyScorer, traj: Trajectory, window: int,
                     stats: StandardizerStats, kind: str = "median") -> ScoredTrajectory:
    if len(traj) < window:
        raise TrajectoryTooShort(f"trajectory {traj.id!r} has {len(traj)} points, window is {window}")
    alphas = score_features(model, trajectory_features(traj, window), stats)
    return ScoredTrajectory(traj.id, tuple(float(a) for a in alphas), aggregate(alphas, kind), kind)


def score_groups(model: AnomalyScorer, groups: Sequence[tuple[str, np.ndarray]],
                 stats: StandardizerStats, kind: str = "median") -> list[ScoredTrajectory]:
    """Score many trajectories given as (id, feature matrix) in one batched pass."""
    groups = [(tid, f) for tid, f in groups]
    if not groups:
        return []
    for tid, f in groups:
        if len(f) == 0:
            raise TrajectoryTooShort(f"trajectory {tid!r} has no segments")
    alphas = score_features(model, np.vstack([f for _, f in groups]), stats)
    out, pos = [], 0
    for tid, f in groups:
        a = alphas[pos:pos + len(f)]
        pos += len(f)
        out.append(ScoredTrajectory(tid, tuple(float(v) for v in a), aggregate(a, kind), kind))
    return out
