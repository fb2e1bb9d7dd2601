"""Measurement ingest and organization.

CSV schema (header required, in this order or any order by name):

    timestamp,lat,lon,cell_id,signal_dbm,tech

``timestamp`` is ISO 8601 UTC (a trailing ``Z`` or explicit offset;
naive values are taken as UTC). An empty ``signal_dbm`` marks a
no-service probe: the device saw no usable signal at that location.
Rows are validated, deduplicated, and kept sorted by timestamp.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator

import numpy as np

from .errors import IngestError

logger = logging.getLogger(__name__)

# Band edges in dBm; lower-inclusive, upper-exclusive.
CUT_POINTS = (-105.0, -95.0, -82.0, -74.0)

_BAND_LABELS = (
    "Poor to none (outdoor only)",
    "Variable (outdoor only)",
    "Good (outdoor only)",
    "Variable in-home, good outdoor",
    "Good in-home and outdoor",
)


@dataclass(frozen=True)
class SignalBand:
    """Half-open signal strength class [lower_dbm, upper_dbm)."""

    ordinal: int
    lower_dbm: float
    upper_dbm: float
    label: str

    def contains(self, signal_dbm: float) -> bool:
        return self.lower_dbm <= signal_dbm < self.upper_dbm

    @property
    def display(self) -> str:
        return f"{self.ordinal}. {self.label}"

    def signal_range_text(self) -> str:
        if self.lower_dbm == -np.inf:
            return f"< {self.upper_dbm:g}"
        if self.upper_dbm == np.inf:
            return f">= {self.lower_dbm:g}"
        return f"{self.lower_dbm:g} to {self.upper_dbm:g}"


def _make_bands() -> tuple[SignalBand, ...]:
    edges = (-np.inf,) + CUT_POINTS + (np.inf,)
    return tuple(
        SignalBand(i + 1, float(edges[i]), float(edges[i + 1]), _BAND_LABELS[i])
        for i in range(5)
    )


BANDS: tuple[SignalBand, ...] = _make_bands()
BAND_BY_ORDINAL = {b.ordinal: b for b in BANDS}


def band_of(signal_dbm: float) -> SignalBand:
    """Map a dBm reading to its band. Total over all finite values."""
    v = float(signal_dbm)
    if not np.isfinite(v):
        raise ValueError(f"signal_dbm must be finite, got {signal_dbm!r}")
    for band in BANDS:
        if band.contains(v):
            return band
    raise AssertionError("unreachable: bands cover the real line")


@dataclass(frozen=True)
class MeasurementRecord:
    """One crowdsourced observation."""

    timestamp: datetime
    lon: float
    lat: float
    cell_id: str | None
    signal_dbm: float | None = None
    tech: str | None = None

    @property
    def no_service(self) -> bool:
        return self.signal_dbm is None


@dataclass(frozen=True)
class IngestConfig:
    """Row acceptance rules."""

    dedup_decimals: int = 5
    min_signal_dbm: float = -150.0
    max_signal_dbm: float = -20.0


@dataclass
class IngestStats:
    """Provenance counters for one ingest run."""

    source: str
    accepted: int = 0
    rejected_coords: int = 0
    rejected_outliers: int = 0
    rejected_rows: int = 0
    deduplicated: int = 0
    row_errors: list[tuple[int, str]] = field(default_factory=list)

    def __add__(self, other: "IngestStats") -> "IngestStats":
        return IngestStats(
            source=f"{self.source};{other.source}",
            accepted=self.accepted + other.accepted,
            rejected_coords=self.rejected_coords + other.rejected_coords,
            rejected_outliers=self.rejected_outliers + other.rejected_outliers,
            rejected_rows=self.rejected_rows + other.rejected_rows,
            deduplicated=self.deduplicated + other.deduplicated,
            row_errors=self.row_errors + other.row_errors,
        )

    def summary(self) -> str:
        lines = [
            f"source: {self.source}",
            f"accepted: {self.accepted}",
            f"rejected_coords: {self.rejected_coords}",
            f"rejected_outliers: {self.rejected_outliers}",
            f"rejected_rows: {self.rejected_rows}",
            f"deduplicated: {self.deduplicated}",
        ]
        for line_no, message in self.row_errors:
            lines.append(f"  line {line_no}: {message}")
        return "\n".join(lines)

    @property
    def total_rejected(self) -> int:
        return self.rejected_coords + self.rejected_outliers + self.rejected_rows


@dataclass
class Dataset:
    """Accepted records, sorted by timestamp, plus provenance."""

    records: list[MeasurementRecord]
    provenance: IngestStats

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.timestamp)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MeasurementRecord]:
        return iter(self.records)

    def service_records(self) -> list[MeasurementRecord]:
        return [r for r in self.records if not r.no_service]

    def no_service_records(self) -> list[MeasurementRecord]:
        return [r for r in self.records if r.no_service]

    def cell_ids(self) -> list[str]:
        return sorted({r.cell_id for r in self.records if r.cell_id is not None})

    def time_range(self) -> tuple[datetime, datetime] | None:
        if not self.records:
            return None
        return self.records[0].timestamp, self.records[-1].timestamp


def points_of(records: Iterable[MeasurementRecord]) -> np.ndarray:
    """Stack (lon, lat) rows into an (n, 2) array."""
    rows = [(r.lon, r.lat) for r in records]
    if not rows:
        return np.empty((0, 2), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def parse_timestamp(text: str) -> datetime:
    """ISO 8601 to an aware UTC datetime; naive input is taken as UTC."""
    t = text.strip()
    if t.endswith(("Z", "z")):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


REQUIRED_COLUMNS = ("timestamp", "lat", "lon", "cell_id", "signal_dbm", "tech")


def parse_csv(path, config: IngestConfig = IngestConfig()) -> Dataset:
    """Ingest a measurement CSV.

    Row-level problems (unparseable timestamp or number, service row
    without a cell id) are recorded with their line numbers and skipped.
    Coordinates outside lon [-180, 180] / lat [-90, 90] and signal
    readings outside the plausibility window are rejected and counted.
    Duplicates (same cell_id and timestamp, lon/lat equal after rounding
    to ``dedup_decimals``) keep the first occurrence.

    Raises IngestError if a required column is missing.
    """
    stats = IngestStats(source=str(path))
    records: list[MeasurementRecord] = []
    seen: set[tuple] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty file, no header row")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise IngestError(f"{path}: missing required column(s): {', '.join(missing)}")
        for row in reader:
            line_no = reader.line_num
            try:
                ts = parse_timestamp(row["timestamp"] or "")
            except ValueError:
                stats.rejected_rows += 1
                stats.row_errors.append((line_no, f"bad timestamp {row['timestamp']!r}"))
                continue
            try:
                lat = float(row["lat"])
                lon = float(row["lon"])
            except (TypeError, ValueError):
                stats.rejected_rows += 1
                stats.row_errors.append((line_no, "bad coordinate value"))
                continue
            signal_text = (row["signal_dbm"] or "").strip()
            if signal_text:
                try:
                    signal: float | None = float(signal_text)
                except ValueError:
                    stats.rejected_rows += 1
                    stats.row_errors.append((line_no, f"bad signal value {signal_text!r}"))
                    continue
            else:
                signal = None
            cell_raw = (row["cell_id"] or "").strip()
            cell_id = cell_raw if cell_raw else None
            if cell_id is None and signal is not None:
                stats.rejected_rows += 1
                stats.row_errors.append((line_no, "service row without cell_id"))
                continue
            if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
                stats.rejected_coords += 1
                continue
            if signal is not None and not (
                config.min_signal_dbm <= signal <= config.max_signal_dbm
            ):
                stats.rejected_outliers += 1
                continue
            key = (
                cell_id,
                ts,
                round(lon, config.dedup_decimals),
                round(lat, config.dedup_decimals),
            )
            if key in seen:
                stats.deduplicated += 1
                continue
            seen.add(key)
            tech = (row["tech"] or "").strip() or None
            records.append(
                MeasurementRecord(
                    timestamp=ts,
                    lon=lon,
                    lat=lat,
                    cell_id=cell_id,
                    signal_dbm=signal,
                    tech=tech,
                )
            )
    stats.accepted = len(records)
    return Dataset(records=records, provenance=stats)


def write_csv(dataset: Dataset, path) -> None:
    """Write records back out in the standard CSV schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUIRED_COLUMNS)
        for r in dataset.records:
            writer.writerow(
                [
                    format_timestamp(r.timestamp),
                    repr(r.lat),
                    repr(r.lon),
                    r.cell_id or "",
                    "" if r.signal_dbm is None else repr(r.signal_dbm),
                    r.tech or "",
                ]
            )


DEFAULT_MIN_POINTS = 20


@dataclass
class PartitionResult:
    """Service records grouped per (cell_id, band ordinal).

    No-service records form per-cell negative pools; those without a
    cell id fall into the global pool. Partitions below ``min_points``
    stay in the map but are flagged untrainable.
    """

    by_band: dict[tuple[str, int], list[MeasurementRecord]]
    negatives_by_cell: dict[str, list[MeasurementRecord]]
    global_negatives: list[MeasurementRecord]
    min_points: int

    def untrainable(self) -> set[tuple[str, int]]:
        return {k for k, v in self.by_band.items() if len(v) < self.min_points}

    def trainable_keys(self) -> list[tuple[str, int]]:
        return sorted(k for k, v in self.by_band.items() if len(v) >= self.min_points)

    def negatives_for(self, cell_id: str) -> list[MeasurementRecord]:
        """No-service pool visible to one cell (its own plus global)."""
        return list(self.negatives_by_cell.get(cell_id, [])) + list(self.global_negatives)


def partition(dataset: Dataset, min_points: int = DEFAULT_MIN_POINTS) -> PartitionResult:
    """Group service records per (cell, band) and pool no-service records."""
    if min_points < 1:
        raise ValueError(f"min_points must be >= 1, got {min_points}")
    by_band: dict[tuple[str, int], list[MeasurementRecord]] = {}
    negatives_by_cell: dict[str, list[MeasurementRecord]] = {}
    global_negatives: list[MeasurementRecord] = []
    for r in dataset.records:
        if r.no_service:
            if r.cell_id is None:
                global_negatives.append(r)
            else:
                negatives_by_cell.setdefault(r.cell_id, []).append(r)
            continue
        key = (r.cell_id, band_of(r.signal_dbm).ordinal)
        by_band.setdefault(key, []).append(r)
    return PartitionResult(
        by_band=by_band,
        negatives_by_cell=negatives_by_cell,
        global_negatives=global_negatives,
        min_points=min_points,
    )


def temporal_split(dataset: Dataset, split_instant: datetime) -> tuple[Dataset, Dataset]:
    """Split into train (< split_instant) and validation (>= split_instant)."""
    if split_instant.tzinfo is None:
        split_instant = split_instant.replace(tzinfo=timezone.utc)
    train = [r for r in dataset.records if r.timestamp < split_instant]
    val = [r for r in dataset.records if r.timestamp >= split_instant]
    if not train:
        logger.warning("temporal_split: empty training side (split at %s)", split_instant)
    if not val:
        logger.warning("temporal_split: empty validation side (split at %s)", split_instant)
    src = dataset.provenance.source
    return (
        Dataset(records=train, provenance=IngestStats(source=f"{src}[train]", accepted=len(train))),
        Dataset(records=val, provenance=IngestStats(source=f"{src}[validation]", accepted=len(val))),
    )
