import math
from datetime import datetime, timezone

import numpy as np
import pytest

from cellcov.errors import IngestError
from cellcov.measurements import (
    BAND_BY_ORDINAL,
    BANDS,
    CUT_POINTS,
    DEFAULT_MIN_POINTS,
    Dataset,
    IngestConfig,
    IngestStats,
    MeasurementRecord,
    band_of,
    format_timestamp,
    parse_csv,
    parse_timestamp,
    partition,
    points_of,
    temporal_split,
    write_csv,
)

UTC = timezone.utc


def rec(ts, lon=-1.5, lat=52.5, cell="c1", dbm=-80.0, tech="4G"):
    return MeasurementRecord(
        timestamp=parse_timestamp(ts), lon=lon, lat=lat, cell_id=cell,
        signal_dbm=dbm, tech=tech,
    )


class TestBands:
    def test_cut_points(self):
        assert CUT_POINTS == (-105.0, -95.0, -82.0, -74.0)

    def test_edges_lower_inclusive(self):
        assert band_of(-105.0).ordinal == 2
        assert band_of(math.nextafter(-105.0, -math.inf)).ordinal == 1
        assert band_of(-95.0).ordinal == 3
        assert band_of(-82.0).ordinal == 4
        assert band_of(-74.0).ordinal == 5

    def test_extremes(self):
        assert band_of(-150.0).ordinal == 1
        assert band_of(-20.0).ordinal == 5

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            band_of(float("nan"))
        with pytest.raises(ValueError):
            band_of(float("inf"))

    def test_category_labels(self):
        expected = {
            1: "1. Poor to none (outdoor only)",
            2: "2. Variable (outdoor only)",
            3: "3. Good (outdoor only)",
            4: "4. Variable in-home, good outdoor",
            5: "5. Good in-home and outdoor",
        }
        assert {b.ordinal: b.display for b in BANDS} == expected
        assert BAND_BY_ORDINAL[5].display == expected[5]

    def test_contains_half_open(self):
        b2 = BAND_BY_ORDINAL[2]
        assert b2.contains(-105.0)
        assert b2.contains(-100.0)
        assert not b2.contains(-95.0)


class TestTimestamps:
    def test_z_suffix(self):
        t = parse_timestamp("2024-01-02T03:04:05Z")
        assert t == datetime(2024, 1, 2, 3, 4, 5, tzinfo=UTC)

    def test_naive_taken_as_utc(self):
        assert parse_timestamp("2024-01-02T03:04:05") == datetime(
            2024, 1, 2, 3, 4, 5, tzinfo=UTC
        )

    def test_offset_converted(self):
        t = parse_timestamp("2024-01-02T03:04:05+02:00")
        assert t == datetime(2024, 1, 2, 1, 4, 5, tzinfo=UTC)

    def test_format_round_trip(self):
        text = "2024-06-30T23:59:59Z"
        assert format_timestamp(parse_timestamp(text)) == text

    def test_garbage_raises(self):
        with pytest.raises(ValueError):
            parse_timestamp("not a time")


HEADER = "timestamp,lat,lon,cell_id,signal_dbm,tech\n"


def write_file(tmp_path, body, name="m.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body, encoding="utf-8")
    return p


class TestParseCsv:
    def test_accepts_good_rows(self, tmp_path):
        p = write_file(
            tmp_path,
            "2024-01-01T00:00:00Z,52.5,-1.5,c1,-80,4G\n"
            "2024-01-01T00:00:01Z,52.6,-1.4,c1,-110,4G\n",
        )
        ds = parse_csv(p)
        assert len(ds.records) == 2
        assert ds.provenance.accepted == 2
        assert ds.records[0].signal_dbm == -80.0

    def test_missing_column_fatal(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("timestamp,lat,lon,cell_id,signal_dbm\n", encoding="utf-8")
        with pytest.raises(IngestError):
            parse_csv(p)

    def test_bad_timestamp_is_row_error(self, tmp_path):
        p = write_file(tmp_path, "yesterday,52.5,-1.5,c1,-80,4G\n")
        ds = parse_csv(p)
        assert len(ds.records) == 0
        assert ds.provenance.rejected_rows == 1
        line, msg = ds.provenance.row_errors[0]
        assert line == 2
        assert "timestamp" in msg

    def test_out_of_range_coordinate_counted(self, tmp_path):
        p = write_file(
            tmp_path,
            "2024-01-01T00:00:00Z,52.5,-181.0,c1,-80,4G\n"
            "2024-01-01T00:00:01Z,91.0,-1.5,c1,-80,4G\n",
        )
        ds = parse_csv(p)
        assert len(ds.records) == 0
        assert ds.provenance.rejected_coords == 2

    def test_implausible_signal_counted(self, tmp_path):
        p = write_file(
            tmp_path,
            "2024-01-01T00:00:00Z,52.5,-1.5,c1,-200,4G\n"
            "2024-01-01T00:00:01Z,52.5,-1.5,c1,-10,4G\n",
        )
        ds = parse_csv(p)
        assert len(ds.records) == 0
        assert ds.provenance.rejected_outliers == 2

    def test_plausibility_window_configurable(self, tmp_path):
        p = write_file(tmp_path, "2024-01-01T00:00:00Z,52.5,-1.5,c1,-200,4G\n")
        ds = parse_csv(p, IngestConfig(min_signal_dbm=-250.0))
        assert len(ds.records) == 1

    def test_service_row_without_cell_is_row_error(self, tmp_path):
        p = write_file(tmp_path, "2024-01-01T00:00:00Z,52.5,-1.5,,-80,4G\n")
        ds = parse_csv(p)
        assert len(ds.records) == 0
        assert ds.provenance.rejected_rows == 1

    def test_empty_signal_is_no_service(self, tmp_path):
        p = write_file(
            tmp_path,
            "2024-01-01T00:00:00Z,52.5,-1.5,c1,,4G\n"
            "2024-01-01T00:00:01Z,52.5,-1.4,,,\n",
        )
        ds = parse_csv(p)
        assert len(ds.records) == 2
        assert all(r.no_service for r in ds.records)
        assert ds.records[0].cell_id == "c1"
        assert ds.records[1].cell_id is None

    def test_dedup_keeps_first(self, tmp_path):
        # same cell, second, and coordinates to 5 decimals
        p = write_file(
            tmp_path,
            "2024-01-01T00:00:00Z,52.500001,-1.500001,c1,-80,4G\n"
            "2024-01-01T00:00:00Z,52.500004,-1.500004,c1,-90,4G\n"
            "2024-01-01T00:00:00Z,52.5001,-1.5001,c1,-95,4G\n",
        )
        ds = parse_csv(p)
        assert len(ds.records) == 2
        assert ds.provenance.deduplicated == 1
        assert ds.records[0].signal_dbm == -80.0

    def test_records_sorted_by_timestamp(self, tmp_path):
        p = write_file(
            tmp_path,
            "2024-01-02T00:00:00Z,52.5,-1.5,c1,-80,4G\n"
            "2024-01-01T00:00:00Z,52.6,-1.4,c1,-80,4G\n",
        )
        ds = parse_csv(p)
        assert [r.timestamp.day for r in ds.records] == [1, 2]

    def test_round_trip(self, tmp_path):
        records = [
            rec("2024-01-01T00:00:00Z", lon=-1.512345678, dbm=-83.25),
            rec("2024-01-01T00:00:05Z", cell=None, dbm=None),
            rec("2024-02-01T12:00:00Z", lat=52.123456789, dbm=-105.0),
        ]
        ds = Dataset(records=records, provenance=IngestStats(source="mem", accepted=3))
        out = tmp_path / "round.csv"
        write_csv(ds, out)
        back = parse_csv(out)
        assert back.provenance.accepted == 3
        assert back.provenance.total_rejected == 0
        assert back.records == sorted(records, key=lambda r: r.timestamp)


class TestPartition:
    def make_dataset(self):
        records = []
        for i in range(25):
            records.append(rec(f"2024-01-01T00:00:{i:02d}Z", dbm=-80.0))  # band 4
        for i in range(5):
            records.append(rec(f"2024-01-01T01:00:{i:02d}Z", dbm=-110.0))  # band 1
        for i in range(4):
            records.append(rec(f"2024-01-01T02:00:{i:02d}Z", dbm=None))  # cell negatives
        records.append(rec("2024-01-01T03:00:00Z", cell=None, dbm=None))  # global
        return Dataset(records=records, provenance=IngestStats(source="mem"))

    def test_by_band_and_min_points(self):
        part = partition(self.make_dataset(), min_points=20)
        assert ("c1", 4) in part.by_band and ("c1", 1) in part.by_band
        assert part.trainable_keys() == [("c1", 4)]
        assert part.untrainable() == {("c1", 1)}

    def test_negative_pools(self):
        part = partition(self.make_dataset(), min_points=20)
        own = part.negatives_for("c1")
        assert len(own) == 5  # 4 cell no-service + 1 global
        assert len(part.negatives_for("other")) == 1

    def test_default_min_points(self):
        assert DEFAULT_MIN_POINTS == 20
        with pytest.raises(ValueError):
            partition(self.make_dataset(), min_points=0)


class TestTemporalSplit:
    def test_boundary_goes_to_validation(self):
        ds = Dataset(
            records=[
                rec("2024-01-01T00:00:00Z"),
                rec("2024-02-01T00:00:00Z"),
                rec("2024-03-01T00:00:00Z"),
            ],
            provenance=IngestStats(source="mem"),
        )
        train, val = temporal_split(ds, parse_timestamp("2024-02-01T00:00:00Z"))
        assert len(train.records) == 1
        assert len(val.records) == 2

    def test_naive_instant_taken_as_utc(self):
        ds = Dataset(records=[rec("2024-01-15T00:00:00Z")],
                     provenance=IngestStats(source="mem"))
        train, val = temporal_split(ds, datetime(2024, 1, 1))
        assert len(val.records) == 1 and len(train.records) == 0


def test_points_of_order_and_empty():
    ds_records = [rec("2024-01-01T00:00:00Z", lon=1.0, lat=2.0),
                  rec("2024-01-01T00:00:01Z", lon=3.0, lat=4.0)]
    pts = points_of(ds_records)
    assert np.array_equal(pts, [[1.0, 2.0], [3.0, 4.0]])
    assert points_of([]).shape == (0, 2)
