import logging

import pytest

from hotgrid import ingest
from hotgrid.errors import DataError
from hotgrid.geocode import GpsPoint

HEADER = "record_id,user_id,timestamp,lat,lon,category,parent_record_id"


def _parse(text, **kw):
    return ingest.parse_records(text.splitlines(keepends=True), **kw)


def test_empty_file_with_header():
    assert _parse(HEADER + "\n") == []


def test_missing_header_aborts():
    with pytest.raises(DataError):
        _parse("r1,u1,100,0.0,0.0,video,\n")
    with pytest.raises(DataError):
        _parse("")


def test_rows_sorted_by_timestamp():
    text = (
        HEADER + "\n"
        "r3,u1,300,1.0,2.0,video,\n"
        "r1,u2,100,1.0,2.0,video,\n"
        "r2,u3,200,1.0,2.0,image,\n"
    )
    recs = _parse(text)
    assert [r.record_id for r in recs] == ["r1", "r2", "r3"]
    assert recs[0].point == GpsPoint(1.0, 2.0)
    assert recs[2].category == "video"


def test_bad_rows_skipped_with_warning(caplog):
    text = (
        HEADER + "\n"
        "r1,u1,100,91.0,0.0,video,\n"  # latitude out of range
        "r2,u1,abc,0.0,0.0,video,\n"  # timestamp not numeric
        "r3,u1,-5,0.0,0.0,video,\n"  # timestamp not positive
        "r4,u1,100,0.0,0.0,video,\n"
        "r4,u1,110,0.0,0.0,video,\n"  # duplicate id
        "r5,u1,100,0.0,0.0,video\n"  # short row
        "r6,,100,0.0,0.0,video,\n"  # empty user
        "r7,u1,120,0.0,0.0,video,\n"
    )
    with caplog.at_level(logging.WARNING, logger="hotgrid.ingest"):
        recs = _parse(text)
    assert [r.record_id for r in recs] == ["r4", "r7"]
    assert sum("skipping line" in m for m in caplog.messages) == 6


def test_strict_mode_aborts_on_first_bad_row():
    text = HEADER + "\nr1,u1,100,91.0,0.0,video,\n"
    with pytest.raises(DataError, match="line 2"):
        _parse(text, strict=True)


def test_share_of_later_record_is_rejected(caplog):
    text = (
        HEADER + "\n"
        "r1,u1,100,0.0,0.0,video,\n"
        "r2,u2,200,0.0,0.0,video,r1\n"  # fine: parent earlier
        "r3,u3,50,0.0,0.0,video,r1\n"  # parent is later than the share
    )
    with caplog.at_level(logging.WARNING, logger="hotgrid.ingest"):
        recs = _parse(text)
    assert [r.record_id for r in recs] == ["r1", "r2"]
    assert recs[1].parent_record_id == "r1"


def test_blank_lines_ignored():
    text = HEADER + "\n\nr1,u1,100,0.0,0.0,video,\n\n"
    assert len(_parse(text)) == 1


def test_edges_dedup_unordered():
    pairs = ingest.parse_social_edges(["u1,u2\n", "u2,u1\n", "u3,u1\n"])
    assert pairs == {("u1", "u2"), ("u1", "u3")}


def test_edges_drop_self_pairs(caplog):
    with caplog.at_level(logging.WARNING, logger="hotgrid.ingest"):
        pairs = ingest.parse_social_edges(["u1,u1\n", "u1,u2\n"])
    assert pairs == {("u1", "u2")}
    assert sum("self-pair" in m for m in caplog.messages) == 1


def test_edges_empty_and_header_only():
    assert ingest.parse_social_edges([]) == set()
    assert ingest.parse_social_edges(["user_a,user_b\n"]) == set()


def test_roundtrip_plain_and_gzip(tmp_path):
    records = [
        ingest.CdsRecord("r1", "u1", 100.0, GpsPoint(12.5, -33.25), "video", None),
        ingest.CdsRecord("r2", "u2", 150.5, GpsPoint(-0.001, 179.9), "image", "r1"),
        ingest.CdsRecord("r3", "u1", 200.0, GpsPoint(0.0, 0.0), "video", None),
    ]
    for name in ("records.csv", "records.csv.gz"):
        path = tmp_path / name
        ingest.write_records(records, path)
        assert ingest.load_records(path) == records

    pairs = {("u1", "u2"), ("a", "b")}
    for name in ("edges.csv", "edges.csv.gz"):
        path = tmp_path / name
        ingest.write_edges(pairs, path)
        assert ingest.load_edges(path) == pairs


def test_gzip_output_is_byte_stable(tmp_path):
    records = [ingest.CdsRecord("r1", "u1", 100.0, GpsPoint(1.0, 2.0), "video", None)]
    a, b = tmp_path / "a.csv.gz", tmp_path / "b.csv.gz"
    ingest.write_records(records, a)
    ingest.write_records(records, b)
    assert a.read_bytes() == b.read_bytes()
