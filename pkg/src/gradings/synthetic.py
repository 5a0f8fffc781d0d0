"""Seeded generator of car-like and bus-like GPS trajectories.

Both families move through the same city disk and share the GPS sampling
process.  They differ in how they move and when they travel:

* car: smoothly drifting heading, speed tied to the hour of the week (slow
  in weekday rush hours, fast at night), trips concentrated around commute
  peaks;
* bus: cruising speed drawn from the same range as cars but unrelated to the
  hour it is driven at, jittery heading around a bearing, occasional stops,
  service spread evenly over 06:00-22:00 every day.

The defaults give 455 cars and 91 buses of 20 fixes, i.e. about 5000 and
1000 windows of 10 points.  Setting ``bus_route_bearings`` and ``bus_speed``
gives an easier variant with buses on fixed spokes at a fixed speed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectory import LocationPoint, Trajectory

METERS_PER_DEG_LAT = 111_320.0
WEEK_START = 1_230_508_800  # 2008-12-29 00:00 UTC, a Monday


@dataclass
class SyntheticConfig:
    n_car: int = 455
    n_bus: int = 91
    length: int | tuple[int, int] = 20
    seed: int = 0
    center: tuple[float, float] = (39.9042, 116.4074)
    city_radius_m: float = 8_000.0
    sample_interval_s: float = 30.0
    sample_jitter_s: float = 5.0
    gps_noise_m: float = 3.0
    car_speed_night: float = 15.0
    car_speed_rush: float = 5.0
    car_speed_spread: float = 0.15  # log-normal sigma per trip
    car_turn_rate: float = 0.002  # rad/s std of heading drift
    car_peak_fraction: float = 0.7
    bus_speed: float | None = None  # None: speed of a car at an unrelated hour
    bus_speed_spread: float = 0.15
    bus_stop_prob: float = 0.05
    bus_route_bearings: tuple[float, ...] | None = None
    bus_heading_noise_deg: float = 12.0
    bus_service_hours: tuple[float, float] = (6.0, 22.0)
    weeks: int = 52


def rush_intensity(hour_of_week: np.ndarray | float) -> np.ndarray:
    """0 at night/weekends, ~1 at 08:00 and 18:00 on weekdays."""
    h = np.asarray(hour_of_week, dtype=np.float64) % 168.0
    day, hour = np.floor(h / 24.0), h % 24.0
    bump = np.exp(-0.5 * ((hour - 8.0) / 1.2) ** 2) + np.exp(-0.5 * ((hour - 18.0) / 1.5) ** 2)
    return np.where(day < 5, np.minimum(bump, 1.0), 0.3 * np.minimum(bump, 1.0))


def _car_base_speed(cfg, hour_of_week):
    return cfg.car_speed_night + (cfg.car_speed_rush - cfg.car_speed_night) * rush_intensity(hour_of_week)


def _length(cfg: SyntheticConfig, rng: np.random.Generator) -> int:
    if isinstance(cfg.length, int):
        return cfg.length
    lo, hi = cfg.length
    return int(rng.integers(lo, hi + 1))


def _start_position(cfg, rng):
    r = cfg.city_radius_m * math.sqrt(rng.uniform())
    a = rng.uniform(0.0, 2.0 * math.pi)
    return r * math.cos(a), r * math.sin(a)


def _times(cfg, rng, n, start_hour_of_week):
    week = int(rng.integers(cfg.weeks))
    t0 = WEEK_START + week * 604800 + start_hour_of_week * 3600.0
    dt = cfg.sample_interval_s + rng.uniform(-cfg.sample_jitter_s, cfg.sample_jitter_s, n - 1)
    return t0 + np.concatenate([[0.0], np.cumsum(dt)])


def _car_start_hour(cfg, rng):
    if rng.uniform() < cfg.car_peak_fraction:
        day = int(rng.integers(5))
        peak = 8.0 if rng.uniform() < 0.5 else 18.0
        return day * 24.0 + peak + rng.normal(0.0, 1.0)
    return rng.uniform(0.0, 168.0)


def _bus_start_hour(cfg, rng):
    lo, hi = cfg.bus_service_hours
    return int(rng.integers(7)) * 24.0 + rng.uniform(lo, hi)


def _to_points(cfg, xy, times, rng):
    xy = xy + rng.normal(0.0, cfg.gps_noise_m, xy.shape)
    lat0, lon0 = cfg.center
    lat = lat0 + xy[:, 1] / METERS_PER_DEG_LAT
    lon = lon0 + xy[:, 0] / (METERS_PER_DEG_LAT * math.cos(math.radians(lat0)))
    return [LocationPoint(float(a), float(o), float(t)) for a, o, t in zip(lat, lon, times)]


def car_trajectory(cfg: SyntheticConfig, rng: np.random.Generator, tid: str) -> Trajectory:
    n = _length(cfg, rng)
    start_h = _car_start_hour(cfg, rng) % 168.0
    times = _times(cfg, rng, n, start_h)
    how = (start_h + (times - times[0]) / 3600.0) % 168.0
    base = _car_base_speed(cfg, how)
    speed = base * math.exp(rng.normal(0.0, cfg.car_speed_spread))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    dts = np.diff(times)
    headings = heading + np.cumsum(rng.normal(0.0, cfg.car_turn_rate, n - 1) * dts)
    steps = (speed[1:] * dts)[:, None] * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    start = np.array(_start_position(cfg, rng))
    xy = start + np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
    return Trajectory(tid, _to_points(cfg, xy, times, rng))


def bus_trajectory(cfg: SyntheticConfig, rng: np.random.Generator, tid: str) -> Trajectory:
    n = _length(cfg, rng)
    start_h = _bus_start_hour(cfg, rng) % 168.0
    times = _times(cfg, rng, n, start_h)
    if cfg.bus_route_bearings:
        bearing = math.radians(rng.choice(cfg.bus_route_bearings) + (180.0 if rng.uniform() < 0.5 else 0.0))
    else:
        bearing = rng.uniform(0.0, 2.0 * math.pi)
    dts = np.diff(times)
    if cfg.bus_speed is None:
        base = _car_base_speed(cfg, _car_start_hour(cfg, rng))
    else:
        base = cfg.bus_speed
    cruise = base * math.exp(rng.normal(0.0, cfg.bus_speed_spread))
    moving = rng.uniform(size=n - 1) >= cfg.bus_stop_prob
    speed = np.where(moving, cruise, 0.1 * cruise)
    headings = bearing + np.radians(rng.normal(0.0, cfg.bus_heading_noise_deg, n - 1))
    steps = (speed * dts)[:, None] * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    start = np.array(_start_position(cfg, rng))
    xy = start + np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
    return Trajectory(tid, _to_points(cfg, xy, times, rng))


def generate(cfg: SyntheticConfig) -> dict[str, list[Trajectory]]:
    """Trajectories per mode; ids are ``car-00000``, ``bus-00000``..."""
    rng = np.random.default_rng(cfg.seed)
    cars = [car_trajectory(cfg, rng, f"car-{i:05d}") for i in range(cfg.n_car)]
    buses = [bus_trajectory(cfg, rng, f"bus-{i:05d}") for i in range(cfg.n_bus)]
    return {"car": cars, "bus": buses}
