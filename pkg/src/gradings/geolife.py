"""GeoLife v1.3 readers: PLT trajectory files and per-user labels.txt."""
from __future__ import annotations

import calendar
from bisect import bisect_left, bisect_right
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from .trajectory import LocationPoint, Trajectory, TrajectoryError

log = logging.getLogger(__name__)

PLT_HEADER_LINES = 6
PLT_HEADER = (
    "Geolife trajectory\n"
    "WGS 84\n"
    "Altitude is in Feet\n"
    "Reserved 3\n"
    "0,2,255,My Track,0,0,2,8421376\n"
    "0\n"
)
MODES = ("car", "bus", "walk", "bike", "train", "taxi", "subway", "other")
# Excel-style day count used by the PLT day field
_DAY_ZERO = 25569.0  # 1970-01-01 expressed as days since 1899-12-30


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class LabeledInterval:
    start: float
    end: float
    mode: str

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"interval start {self.start} is not before end {self.end}")

    def contains(self, t: float) -> bool:
        return self.start <= t <= self.end


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("bounding box must have min < max on both axes")

    def contains(self, p: LocationPoint) -> bool:
        return self.lat_min <= p.lat <= self.lat_max and self.lon_min <= p.lon <= self.lon_max

    @classmethod
    def parse(cls, text: str) -> "BoundingBox":
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox needs lat_min,lat_max,lon_min,lon_max")
        return cls(*parts)

    def __str__(self):
        return f"{self.lat_min},{self.lat_max},{self.lon_min},{self.lon_max}"


BEIJING = BoundingBox(39.4, 41.1, 115.4, 117.6)


def _utc_epoch(text: str, fmt: str) -> float:
    return float(calendar.timegm(datetime.strptime(text, fmt).timetuple()))


def _dedupe(points: list[LocationPoint], source: str) -> list[LocationPoint]:
    """Drop repeated timestamps (keep the first); reject time going backwards."""
    out: list[LocationPoint] = []
    for i, p in enumerate(points):
        if out and p.timestamp == out[-1].timestamp:
            continue
        if out and p.timestamp < out[-1].timestamp:
            raise TrajectoryError(f"{source}: timestamp decreases at record index {i}")
        out.append(p)
    return out


def parse_plt(lines: Iterable[str], traj_id: str = "plt") -> Trajectory:
    points = []
    for lineno, line in enumerate(lines, start=1):
        if lineno <= PLT_HEADER_LINES:
            continue
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise ParseError(f"expected 7 fields, got {len(fields)}", lineno)
        try:
            lat, lon = float(fields[0]), float(fields[1])
            ts = _utc_epoch(f"{fields[5]} {fields[6]}", "%Y-%m-%d %H:%M:%S")
            points.append(LocationPoint(lat, lon, ts))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
    return Trajectory(traj_id, _dedupe(points, traj_id))


def format_plt(traj: Trajectory, altitude_ft: float = 0.0) -> str:
    """Serialize to PLT text; the inverse of :func:`parse_plt` for whole-second timestamps."""
    rows = [PLT_HEADER]
    for p in traj.points:
        dt = datetime.fromtimestamp(p.timestamp, tz=timezone.utc)
        days = p.timestamp / 86400.0 + _DAY_ZERO
        rows.append(f"{p.lat!r},{p.lon!r},0,{altitude_ft:g},{days:.10f},"
                    f"{dt:%Y-%m-%d},{dt:%H:%M:%S}\n")
    return "".join(rows)


def parse_labels(lines: Iterable[str]) -> list[LabeledInterval]:
    out = []
    for lineno, line in enumerate(lines, start=1):
        if lineno == 1:
            continue
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
        try:
            start = _utc_epoch(fields[0].strip(), "%Y/%m/%d %H:%M:%S")
            end = _utc_epoch(fields[1].strip(), "%Y/%m/%d %H:%M:%S")
            mode = fields[2].strip().lower()
            out.append(LabeledInterval(start, end, mode if mode in MODES else "other"))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
    return out


def _user_points(user_dir: Path) -> list[LocationPoint]:
    points: list[LocationPoint] = []
    for plt in sorted((user_dir / "Trajectory").glob("*.plt")):
        try:
            with plt.open() as fh:
                points.extend(parse_plt(fh, plt.stem).points)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable PLT %s: %s", plt, exc)
    points.sort(key=lambda p: p.timestamp)
    out: list[LocationPoint] = []
    for p in points:
        if not out or p.timestamp != out[-1].timestamp:
            out.append(p)
    return out


def build_scenario(root: str | Path, modes: Iterable[str], bbox: BoundingBox = BEIJING) -> dict[str, list[Trajectory]]:
    """Labeled sub-trajectories for each requested mode.

    A labeled interval becomes a trajectory of the user's points inside it
    (closed interval); it is kept only if it has >= 2 points, all inside
    ``bbox``.  Order: user id, then interval start.
    """
    modes = tuple(modes)
    data_dir = Path(root) / "Data"
    if not data_dir.is_dir():
        data_dir = Path(root)
    out: dict[str, list[Trajectory]] = {m: [] for m in modes}
    users = sorted(d for d in data_dir.iterdir() if d.is_dir()) if data_dir.is_dir() else []
    for user_dir in users:
        labels_path = user_dir / "labels.txt"
        if not labels_path.is_file():
            log.warning("user %s has no labels.txt; skipped", user_dir.name)
            continue
        try:
            with labels_path.open() as fh:
                intervals = parse_labels(fh)
        except (OSError, ValueError) as exc:
            log.warning("user %s: unreadable labels.txt (%s); skipped", user_dir.name, exc)
            continue
        wanted = sorted((iv for iv in intervals if iv.mode in modes), key=lambda iv: iv.start)
        if not wanted:
            continue
        points = _user_points(user_dir)
        times = [p.timestamp for p in points]
        for iv in wanted:
            sub = points[bisect_left(times, iv.start):bisect_right(times, iv.end)]
            if len(sub) < 2 or not all(bbox.contains(p) for p in sub):
                continue
            stamp = datetime.fromtimestamp(iv.start, tz=timezone.utc).strftime("%Y%m%d%H%M%S")
            out[iv.mode].append(Trajectory(f"{user_dir.name}_{stamp}", sub))
    return out


def build_dataset(root: str | Path, mode: str, bbox: BoundingBox = BEIJING) -> list[Trajectory]:
    return build_scenario(root, [mode], bbox)[mode]
