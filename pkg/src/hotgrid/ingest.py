"""Reading and writing request records and social edges.

Both file kinds are UTF-8 CSV, gzip-transparent by extension. Records
carry one content request each; edges are unordered friendship pairs.
Share relations travel inside the records file via parent_record_id.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

from . import geocode
from .errors import DataError

log = logging.getLogger(__name__)

RECORDS_HEADER = ["record_id", "user_id", "timestamp", "lat", "lon", "category", "parent_record_id"]
EDGES_HEADER = ["user_a", "user_b"]


@dataclass(frozen=True)
class CdsRecord:
    """One completed content request."""

    record_id: str
    user_id: str
    timestamp: float  # seconds since epoch, > 0
    point: geocode.GpsPoint
    category: str
    parent_record_id: str | None = None  # set when this request shares an earlier one


def open_text(path: str | Path) -> TextIO:
    """Open a text file for reading, decompressing if the name ends in .gz."""
    path = Path(path)
    try:
        if path.suffix == ".gz":
            return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
        return open(path, "rt", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None


def write_text(path: str | Path, text: str) -> None:
    """Write text, gzipping if the name ends in .gz.

    Compressed output embeds neither filename nor mtime, so identical
    content always gives identical bytes.
    """
    path = Path(path)
    if path.suffix == ".gz":
        path.write_bytes(gzip.compress(text.encode("utf-8"), mtime=0))
    else:
        path.write_text(text, encoding="utf-8")


def _row_error(line_no: int, msg: str, strict: bool) -> None:
    if strict:
        raise DataError(f"line {line_no}: {msg}")
    log.warning("skipping line %d: %s", line_no, msg)


def parse_records(stream: Iterable[str], strict: bool = False) -> list[CdsRecord]:
    """Parse a records CSV into timestamp-sorted CdsRecords.

    Malformed rows are skipped with a logged warning, or abort the parse
    with DataError when strict is set. A missing or wrong header always
    aborts.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("records file is empty, expected a header row") from None
    if [h.strip() for h in header] != RECORDS_HEADER:
        raise DataError(f"bad records header {header!r}, expected {RECORDS_HEADER!r}")

    records: list[CdsRecord] = []
    seen_ids: set[str] = set()
    line_of: dict[str, int] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(RECORDS_HEADER):
            _row_error(line_no, f"expected {len(RECORDS_HEADER)} fields, got {len(row)}", strict)
            continue
        rid, uid, ts_s, lat_s, lon_s, cat, parent = (f.strip() for f in row)
        if not rid or not uid or not cat:
            _row_error(line_no, "empty record_id, user_id or category", strict)
            continue
        if rid in seen_ids:
            _row_error(line_no, f"duplicate record_id {rid!r}", strict)
            continue
        try:
            ts = float(ts_s)
        except ValueError:
            _row_error(line_no, f"non-numeric timestamp {ts_s!r}", strict)
            continue
        if not ts > 0:
            _row_error(line_no, f"timestamp must be > 0, got {ts_s!r}", strict)
            continue
        try:
            point = geocode.validate_point(float(lat_s), float(lon_s))
        except (ValueError, DataError) as exc:
            _row_error(line_no, f"bad coordinates ({lat_s!r}, {lon_s!r}): {exc}", strict)
            continue
        seen_ids.add(rid)
        line_of[rid] = line_no
        records.append(CdsRecord(rid, uid, ts, point, cat, parent or None))

    # share links must point backwards (or sideways) in time
    by_id = {r.record_id: r for r in records}
    kept: list[CdsRecord] = []
    for r in records:
        if r.parent_record_id is not None:
            parent = by_id.get(r.parent_record_id)
            if parent is not None and parent.timestamp > r.timestamp:
                _row_error(
                    line_of[r.record_id],
                    f"record {r.record_id!r} shares later record {parent.record_id!r}",
                    strict,
                )
                continue
        kept.append(r)

    kept.sort(key=lambda r: (r.timestamp, r.record_id))
    return kept


def parse_social_edges(stream: Iterable[str], strict: bool = False) -> set[tuple[str, str]]:
    """Parse friendship pairs; unordered, deduplicated, no self-pairs.

    Pairs are stored sorted so (a, b) and (b, a) collapse. An optional
    header line is tolerated and skipped.
    """
    pairs: set[tuple[str, str]] = set()
    reader = csv.reader(stream)
    for line_no, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        fields = [f.strip() for f in row]
        if line_no == 1 and fields == EDGES_HEADER:
            continue
        if len(fields) != 2 or not fields[0] or not fields[1]:
            _row_error(line_no, f"expected user_a,user_b, got {row!r}", strict)
            continue
        a, b = fields
        if a == b:
            log.warning("dropping self-pair %r at line %d", a, line_no)
            continue
        pairs.add((a, b) if a < b else (b, a))
    return pairs


def load_records(path: str | Path, strict: bool = False) -> list[CdsRecord]:
    with open_text(path) as fh:
        return parse_records(fh, strict=strict)


def load_edges(path: str | Path, strict: bool = False) -> set[tuple[str, str]]:
    with open_text(path) as fh:
        return parse_social_edges(fh, strict=strict)


def _format_ts(ts: float) -> str:
    # integers stay integers in the file; anything else keeps full precision
    return str(int(ts)) if float(ts).is_integer() else repr(ts)


def write_records(records: Iterable[CdsRecord], path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORDS_HEADER)
    for r in records:
        w.writerow(
            [
                r.record_id,
                r.user_id,
                _format_ts(r.timestamp),
                repr(r.point.lat),
                repr(r.point.lon),
                r.category,
                r.parent_record_id or "",
            ]
        )
    write_text(path, buf.getvalue())


def write_edges(pairs: Iterable[tuple[str, str]], path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EDGES_HEADER)
    for a, b in sorted(pairs):
        w.writerow([a, b])
    write_text(path, buf.getvalue())
