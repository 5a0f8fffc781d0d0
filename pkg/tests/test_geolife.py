import calendar
import logging

import pytest
from hypothesis import given, strategies as st

from gradings.geolife import (BEIJING, BoundingBox, ParseError, build_dataset, build_scenario, format_plt,
                              parse_labels, parse_plt)
from gradings.trajectory import LocationPoint, Trajectory, TrajectoryError

HEADER = ["Geolife trajectory", "WGS 84", "Altitude is in Feet", "Reserved 3",
          "0,2,255,My Track,0,0,2,8421376", "0"]


def _epoch(y, mo, d, h, mi, s):
    return float(calendar.timegm((y, mo, d, h, mi, s)))


def test_parse_record():
    traj = parse_plt(HEADER + ["39.906631,116.385564,0,492,39882.55,2009-03-10,13:12:00"])
    (p,) = traj.points
    assert (p.lat, p.lon) == (39.906631, 116.385564)
    # 2009-03-10 is 14313 days after 1970-01-01
    assert p.timestamp == 14313 * 86400 + 13 * 3600 + 12 * 60


def test_header_only_file_is_invalid():
    with pytest.raises(TrajectoryError):
        parse_plt(HEADER)


def test_short_record_names_line():
    with pytest.raises(ParseError) as err:
        parse_plt(HEADER + ["39.9,116.4,0,492,39882.55,2009-03-10,13:12:00", "39.9,116.4,0,492,39882.55"])
    assert err.value.line == 8


def test_duplicate_timestamps_keep_first_and_backwards_time_fails():
    rows = ["39.1,116.1,0,0,0,2009-03-10,13:12:00", "39.2,116.2,0,0,0,2009-03-10,13:12:00",
            "39.3,116.3,0,0,0,2009-03-10,13:12:05"]
    traj = parse_plt(HEADER + rows)
    assert [p.lat for p in traj.points] == [39.1, 39.3]
    with pytest.raises(TrajectoryError, match="index 1"):
        parse_plt(HEADER + [rows[2], rows[0]])


def test_labels():
    out = parse_labels(["Start Time\tEnd Time\tTransportation Mode",
                        "2008/04/02 11:24:21\t2008/04/02 11:50:45\tbus",
                        "2008/04/03 01:00:00\t2008/04/03 02:00:00\tairplane"])
    assert out[0].mode == "bus"
    assert out[0].start == _epoch(2008, 4, 2, 11, 24, 21)
    assert out[0].end == _epoch(2008, 4, 2, 11, 50, 45)
    assert out[1].mode == "other"
    assert parse_labels(["Start Time\tEnd Time\tTransportation Mode"]) == []
    with pytest.raises(ParseError):
        parse_labels(["header", "2008/04/02 11:24:21\tbus"])


@given(st.lists(st.tuples(st.floats(-90, 90), st.floats(-180, 180), st.integers(1, 10_000)),
                min_size=1, max_size=20))
def test_plt_round_trip(rows):
    t, pts = 1_200_000_000, []
    for lat, lon, dt in rows:
        t += dt
        pts.append(LocationPoint(lat, lon, float(t)))
    traj = Trajectory("x", pts)
    assert parse_plt(format_plt(traj).splitlines(), "x").points == traj.points


def test_bbox_parse_and_contains():
    box = BoundingBox.parse("39.4,41.1,115.4,117.6")
    assert box == BEIJING and str(box) == "39.4,41.1,115.4,117.6"
    assert box.contains(LocationPoint(39.4, 117.6, 0))
    assert not box.contains(LocationPoint(39.39, 116.0, 0))
    with pytest.raises(ValueError):
        BoundingBox(1, 0, 0, 1)


def _write_user(root, user, points, labels):
    d = root / "Data" / user / "Trajectory"
    d.mkdir(parents=True)
    (d / "a.plt").write_text(format_plt(Trajectory("a", points)))
    if labels is not None:
        lines = ["Start Time\tEnd Time\tTransportation Mode"]
        for start, end, mode in labels:
            lines.append(f"{start}\t{end}\t{mode}")
        (root / "Data" / user / "labels.txt").write_text("\n".join(lines) + "\n")


@pytest.fixture
def geolife_root(tmp_path):
    base = _epoch(2009, 3, 10, 8, 0, 0)
    inside = [LocationPoint(39.9, 116.4 + 1e-4 * i, base + 10 * i) for i in range(30)]
    _write_user(tmp_path, "001", inside, [
        ("2009/03/10 08:00:00", "2009/03/10 08:01:30", "car"),   # points 0..9 (closed interval)
        ("2009/03/10 08:02:00", "2009/03/10 08:04:50", "bus"),   # points 12..29
        ("2010/01/01 00:00:00", "2010/01/01 01:00:00", "car"),   # outside recorded time
    ])
    stray = [LocationPoint(39.9, 116.4, base + 10 * i) for i in range(5)]
    stray[2] = LocationPoint(30.0, 116.4, base + 20)
    _write_user(tmp_path, "002", stray, [("2009/03/10 08:00:00", "2009/03/10 08:01:00", "car")])
    _write_user(tmp_path, "003", inside, None)
    return tmp_path


def test_build_scenario(geolife_root, caplog):
    with caplog.at_level(logging.WARNING):
        out = build_scenario(geolife_root, ["car", "bus"])
    assert [t.id for t in out["car"]] == ["001_20090310080000"]
    assert len(out["car"][0]) == 10
    assert len(out["bus"][0]) == 18
    assert "003" in caplog.text
    assert build_scenario(geolife_root, ["car", "bus"]) == out
    assert build_dataset(geolife_root, "bus") == out["bus"]


def test_unreadable_plt_is_skipped(geolife_root):
    (geolife_root / "Data" / "001" / "Trajectory" / "b.plt").write_text("garbage\n" * 7)
    assert len(build_dataset(geolife_root, "car")) == 1
