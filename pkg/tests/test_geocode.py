import math
import random

import pytest

from hotgrid import geocode
from hotgrid.errors import DataError

DEG_KM = math.pi / 180.0 * geocode.EARTH_RADIUS_KM

# Published cell radii (metres): half the larger cell dimension at the
# equator, rounded the way the usual reference tables round them.
TABLE_RADIUS_M = {5: 2400.0, 6: 610.0, 7: 76.0, 8: 19.0}


def test_known_codes():
    assert geocode.encode(57.64911, 10.40744, 7) == "u4pruyd"
    assert geocode.encode(0.0, 0.0, 1) == "s"
    # midpoints go to the upper/right half, so (0, 0) sits in "s"
    c = geocode.decode_center("s")
    assert c.lat == pytest.approx(22.5) and c.lon == pytest.approx(22.5)


def test_prefix_is_shorter_encoding():
    rng = random.Random(11)
    for _ in range(300):
        lat = rng.uniform(-90.0, 90.0)
        lon = rng.uniform(-180.0, 180.0)
        full = geocode.encode(lat, lon, 8)
        for n in range(1, 8):
            assert geocode.encode(lat, lon, n) == full[:n]


def test_child_bounds_nest_inside_parent():
    rng = random.Random(12)
    for _ in range(200):
        code = geocode.encode(rng.uniform(-90, 90), rng.uniform(-180, 180), 7)
        child = geocode.decode_bounds(code)
        parent = geocode.decode_bounds(code[:-1])
        assert parent.lat_lo <= child.lat_lo < child.lat_hi <= parent.lat_hi
        assert parent.lon_lo <= child.lon_lo < child.lon_hi <= parent.lon_hi


def test_center_reencodes_to_same_code():
    rng = random.Random(13)
    for length in (5, 6, 7):
        for _ in range(200):
            code = geocode.encode(rng.uniform(-90, 90), rng.uniform(-180, 180), length)
            c = geocode.decode_center(code)
            assert geocode.encode(c.lat, c.lon, length) == code


def test_roundtrip_error_bounded_by_cell_half_diagonal():
    rng = random.Random(14)
    for length in (6, 7):
        for _ in range(300):
            lat = rng.uniform(-90.0, 90.0)
            lon = rng.uniform(-180.0, 180.0)
            code = geocode.encode(lat, lon, length)
            c = geocode.decode_center(code)
            err_km = geocode.haversine_km((lat, lon), c)
            b = geocode.decode_bounds(code)
            half_lat = (b.lat_hi - b.lat_lo) / 2.0 * DEG_KM
            half_lon = (
                (b.lon_hi - b.lon_lo)
                / 2.0
                * DEG_KM
                * math.cos(math.radians((b.lat_lo + b.lat_hi) / 2.0))
            )
            half_diag = math.hypot(half_lat, half_lon)
            assert err_km <= half_diag * (1.0 + 1e-9)


def test_cell_size_matches_published_radii():
    for length, radius_m in TABLE_RADIUS_M.items():
        lat_deg, lon_deg = geocode.cell_size_deg(length)
        half_max_m = max(lat_deg, lon_deg) / 2.0 * DEG_KM * 1000.0
        assert half_max_m == pytest.approx(radius_m, rel=0.02)


def test_sub_areas_tile_the_parent():
    parent = "u4pruy"
    kids = geocode.sub_areas(parent)
    assert len(kids) == 32
    assert len(set(kids)) == 32
    pb = geocode.decode_bounds(parent)
    lat_edges = set()
    lon_edges = set()
    area = 0.0
    for kid in kids:
        b = geocode.decode_bounds(kid)
        assert pb.lat_lo <= b.lat_lo < b.lat_hi <= pb.lat_hi
        assert pb.lon_lo <= b.lon_lo < b.lon_hi <= pb.lon_hi
        lat_edges.add(b.lat_lo)
        lon_edges.add(b.lon_lo)
        area += (b.lat_hi - b.lat_lo) * (b.lon_hi - b.lon_lo)
    # 8 lon columns by 4 lat rows, covering the parent exactly
    assert len(lon_edges) == 8 and len(lat_edges) == 4
    parent_area = (pb.lat_hi - pb.lat_lo) * (pb.lon_hi - pb.lon_lo)
    assert area == pytest.approx(parent_area, rel=1e-12)


def test_sub_grid_position_matches_bounds():
    parent = "gbsuv9"
    pb = geocode.decode_bounds(parent)
    lat_step = (pb.lat_hi - pb.lat_lo) / geocode.SUB_ROWS
    lon_step = (pb.lon_hi - pb.lon_lo) / geocode.SUB_COLS
    for kid in geocode.sub_areas(parent):
        col, row = geocode.sub_grid_position(kid)
        b = geocode.decode_bounds(kid)
        assert b.lon_lo == pytest.approx(pb.lon_lo + col * lon_step, abs=1e-12)
        assert b.lat_lo == pytest.approx(pb.lat_lo + row * lat_step, abs=1e-12)


def test_last_digit_index():
    assert geocode.last_digit_index("u4pruyv") == 27
    assert geocode.last_digit_index("u4pruy0") == 0
    assert geocode.last_digit_index("z") == 31
    for i, c in enumerate(geocode.ALPHABET):
        assert geocode.last_digit_index("u4pruy" + c) == i


def test_haversine_known_values():
    one_deg = geocode.haversine_km((0.0, 0.0), (0.0, 1.0))
    assert one_deg == pytest.approx(111.19492664455873, abs=1e-9)
    assert geocode.haversine_km((12.3, 45.6), (12.3, 45.6)) == 0.0
    # antipodal points sit half a circumference apart
    assert geocode.haversine_km((0.0, 0.0), (0.0, 180.0)) == pytest.approx(
        math.pi * geocode.EARTH_RADIUS_KM, abs=1e-9
    )


def test_haversine_symmetry():
    rng = random.Random(15)
    for _ in range(100):
        a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
        assert geocode.haversine_km(a, b) == geocode.haversine_km(b, a)
        assert geocode.haversine_km(a, b) >= 0.0


def test_rejects_bad_coordinates():
    with pytest.raises(DataError):
        geocode.encode(90.5, 0.0, 7)
    with pytest.raises(DataError):
        geocode.encode(0.0, -180.5, 7)
    with pytest.raises(DataError):
        geocode.encode(float("nan"), 0.0, 7)
    with pytest.raises(DataError):
        geocode.encode(0.0, float("inf"), 7)
    with pytest.raises(DataError):
        geocode.encode(0.0, 0.0, 0)
    with pytest.raises(DataError):
        geocode.encode(0.0, 0.0, 13)


def test_rejects_bad_codes():
    for bad in ("", "u4prai", "ABC", "u4pruyd-", "x" * 13):
        with pytest.raises(DataError):
            geocode.decode_bounds(bad)
    # 'a', 'i', 'l', 'o' are not part of the alphabet
    for c in "ailo":
        with pytest.raises(DataError):
            geocode.validate_code("u4pru" + c)
    with pytest.raises(DataError):
        geocode.sub_grid_position("u4pruy")  # even length has a 4x8 layout
