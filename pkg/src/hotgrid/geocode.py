"""Geohash encoding, decoding and great-circle distance.

Cells use the standard base-32 alphabet and bit interleaving starting
with longitude. Each character adds 5 bits, so a length-7 code is an
18-bit longitude by 17-bit latitude cell, and every length-6 cell
contains exactly 32 length-7 sub-cells laid out on an 8 (lon) by
4 (lat) grid.
"""

from __future__ import annotations

import math
from typing import NamedTuple

from .errors import DataError

ALPHABET = "0123456789bcdefghjkmnpqrstuvwxyz"
_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}

EARTH_RADIUS_KM = 6371.0
MAX_LEN = 12

# Sub-cell layout inside one parent cell: the final character of a code
# whose length is odd (like 7) packs bits as lon,lat,lon,lat,lon.
SUB_COLS = 8  # longitude divisions contributed by one odd-position char
SUB_ROWS = 4  # latitude divisions


class GpsPoint(NamedTuple):
    lat: float
    lon: float


class CellBounds(NamedTuple):
    """Half-open in spirit; the shared edges belong to the cell above/right."""

    lat_lo: float
    lat_hi: float
    lon_lo: float
    lon_hi: float


def validate_point(lat: float, lon: float) -> GpsPoint:
    """Check coordinate ranges and return a GpsPoint.

    Raises DataError for non-finite values or coordinates outside
    [-90, 90] x [-180, 180].
    """
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise DataError(f"non-finite coordinate: lat={lat!r} lon={lon!r}")
    if not -90.0 <= lat <= 90.0:
        raise DataError(f"latitude out of range [-90, 90]: {lat!r}")
    if not -180.0 <= lon <= 180.0:
        raise DataError(f"longitude out of range [-180, 180]: {lon!r}")
    return GpsPoint(float(lat), float(lon))


def validate_code(code: str) -> str:
    if not isinstance(code, str) or not 1 <= len(code) <= MAX_LEN:
        raise DataError(f"bad cell code length: {code!r}")
    for c in code:
        if c not in _CHAR_INDEX:
            raise DataError(f"bad cell code character {c!r} in {code!r}")
    return code


def encode(lat: float, lon: float, length: int) -> str:
    """Encode a point to a cell code of the given length."""
    validate_point(lat, lon)
    if not 1 <= length <= MAX_LEN:
        raise DataError(f"cell code length must be in [1, {MAX_LEN}]: {length}")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bits = 0
    value = 0
    even = True  # alternate lon, lat, lon, ...
    while len(chars) < length:
        if even:
            mid = (lon_lo + lon_hi) / 2.0
            if lon >= mid:
                value = value * 2 + 1
                lon_lo = mid
            else:
                value = value * 2
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2.0
            if lat >= mid:
                value = value * 2 + 1
                lat_lo = mid
            else:
                value = value * 2
                lat_hi = mid
        even = not even
        bits += 1
        if bits == 5:
            chars.append(ALPHABET[value])
            bits = 0
            value = 0
    return "".join(chars)


def decode_bounds(code: str) -> CellBounds:
    """Return the bounding box of a cell code."""
    validate_code(code)
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for c in code:
        value = _CHAR_INDEX[c]
        for shift in (4, 3, 2, 1, 0):
            bit = (value >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2.0
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2.0
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return CellBounds(lat_lo, lat_hi, lon_lo, lon_hi)


def decode_center(code: str) -> GpsPoint:
    b = decode_bounds(code)
    return GpsPoint((b.lat_lo + b.lat_hi) / 2.0, (b.lon_lo + b.lon_hi) / 2.0)


def cell_size_deg(length: int) -> tuple[float, float]:
    """(lat_deg, lon_deg) extents of one cell at the given code length."""
    if not 1 <= length <= MAX_LEN:
        raise DataError(f"cell code length must be in [1, {MAX_LEN}]: {length}")
    total_bits = 5 * length
    lon_bits = (total_bits + 1) // 2
    lat_bits = total_bits // 2
    return 180.0 / (1 << lat_bits), 360.0 / (1 << lon_bits)


def last_digit_index(code: str) -> int:
    """Alphabet index of the final character, in [0, 32)."""
    validate_code(code)
    return _CHAR_INDEX[code[-1]]


def sub_areas(prefix: str) -> list[str]:
    """The 32 child codes of a cell, ordered by alphabet index."""
    validate_code(prefix)
    if len(prefix) >= MAX_LEN:
        raise DataError(f"cannot subdivide a length-{len(prefix)} code")
    return [prefix + c for c in ALPHABET]


def sub_grid_position(code: str) -> tuple[int, int]:
    """(col, row) of a cell inside its parent, parent length even.

    Valid for odd-length codes (the common length-7 case): the last
    character's 5 bits are lon,lat,lon,lat,lon, giving an 8x4 grid with
    col 0 at the west edge and row 0 at the south edge.
    """
    validate_code(code)
    if len(code) % 2 == 0:
        raise DataError(f"sub-grid position needs an odd-length code: {code!r}")
    v = _CHAR_INDEX[code[-1]]
    l2, a1, l1, a0, l0 = (v >> 4) & 1, (v >> 3) & 1, (v >> 2) & 1, (v >> 1) & 1, v & 1
    col = l2 * 4 + l1 * 2 + l0
    row = a1 * 2 + a0
    return col, row


def haversine_km(a: GpsPoint | tuple[float, float], b: GpsPoint | tuple[float, float]) -> float:
    """Great-circle distance in kilometres on a 6371 km sphere."""
    lat_a, lon_a = math.radians(a[0]), math.radians(a[1])
    lat_b, lon_b = math.radians(b[0]), math.radians(b[1])
    d = (
        math.sin((lat_b - lat_a) / 2.0) ** 2
        + math.cos(lat_a) * math.cos(lat_b) * math.sin((lon_b - lon_a) / 2.0) ** 2
    )
    # guard against rounding pushing the argument a hair above 1
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(d)))
