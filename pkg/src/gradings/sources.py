"""Turn trajectories from any supported source into a ``SegmentDataset``."""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable

import numpy as np

from .evaluation import SegmentDataset, TrajectorySegments
from .geolife import BEIJING, BoundingBox, build_scenario
from .synthetic import SyntheticConfig, generate
from .trajectory import FEATURES_PER_POINT, Trajectory, trajectory_features

log = logging.getLogger(__name__)


class SourceError(ValueError):
    """Unreadable or empty input data."""


def segment_dataset(by_mode: dict[str, Iterable[Trajectory]], window: int) -> SegmentDataset:
    """Flatten every trajectory; those shorter than ``window`` are counted and dropped."""
    trajs: list[TrajectorySegments] = []
    short: dict[str, int] = {}
    for mode in sorted(by_mode):
        short[mode] = 0
        for t in by_mode[mode]:
            if len(t) < window:
                short[mode] += 1
                continue
            trajs.append(TrajectorySegments(t.id, mode, trajectory_features(t, window)))
    return SegmentDataset(window, trajs, short)


def synthetic_dataset(cfg: SyntheticConfig, window: int, modes: Iterable[str] | None = None) -> SegmentDataset:
    by_mode = generate(cfg)
    if modes is not None:
        by_mode = {m: by_mode.get(m, []) for m in modes}
    return segment_dataset(by_mode, window)


def geolife_dataset(root: str | Path, modes: Iterable[str], window: int,
                    bbox: BoundingBox = BEIJING) -> SegmentDataset:
    root = Path(root)
    if not root.is_dir():
        raise SourceError(f"data root {root} does not exist or is not a directory")
    data = segment_dataset(build_scenario(root, modes, bbox), window)
    if not data.trajectories:
        raise SourceError(f"no labeled trajectories of modes {sorted(modes)} with >= {window} points under {root}")
    return data


def write_segments_csv(data: SegmentDataset, path: str | Path) -> None:
    """One row per segment: trajectory_id, mode, f0..f{D-1}."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id", "mode", *(f"f{i}" for i in range(data.dim))])
        for t in data.trajectories:
            for row in t.features:
                w.writerow([t.id, t.mode, *(repr(float(v)) for v in row)])


def csv_dataset(path: str | Path, window: int, modes: Iterable[str] | None = None) -> SegmentDataset:
    """Read pre-flattened segments; rows of one trajectory must be contiguous."""
    path = Path(path)
    if not path.is_file():
        raise SourceError(f"segment CSV {path} does not exist")
    wanted = None if modes is None else set(modes)
    dim = FEATURES_PER_POINT * window
    groups: dict[str, tuple[str, list[list[float]]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["trajectory_id", "mode"]:
            raise SourceError(f"{path}: header must start with trajectory_id,mode")
        if len(header) - 2 != dim:
            raise SourceError(f"{path}: {len(header) - 2} feature columns, window {window} needs {dim}")
        last = None
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SourceError(f"{path}:{lineno}: expected {len(header)} fields")
            tid, mode = row[0], row[1]
            if tid in groups and tid != last:
                raise SourceError(f"{path}:{lineno}: rows of {tid!r} are not contiguous")
            last = tid
            if wanted is not None and mode not in wanted:
                continue
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise SourceError(f"{path}:{lineno}: {exc}") from exc
            groups.setdefault(tid, (mode, []))[1].append(values)
    trajs = [TrajectorySegments(tid, mode, np.array(rows)) for tid, (mode, rows) in groups.items()]
    if not trajs:
        raise SourceError(f"{path}: no segments")
    return SegmentDataset(window, trajs, {})
