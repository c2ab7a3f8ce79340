"""Loading and validating station/reading files into an STDataset.

Input is two delimiter-separated text files:

* stations: header row, then ``station_id,lon,lat``
* readings: ``station_id,timestamp_iso8601,value`` (header optional; a first
  row whose value field does not parse as a number is treated as a header)

Readings land at step ``round((ts - t0) / dt)``. Timestamps must align to the
step grid within one second; duplicates and unknown stations are hard errors.
Values outside the declared range are clamped and reported as warnings.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import List

import numpy as np

from .model import STDataset, STSeries, Station


@dataclass
class ValidationReport:
    station_count: int
    timestamp_count: int
    missing_fraction: float
    per_slice_sample_counts: np.ndarray
    warnings: List[str] = field(default_factory=list)


class IngestError(ValueError):
    """Raised for malformed or inconsistent input files."""


def parse_timestamp(text: str) -> int:
    """ISO-8601 timestamp (or raw epoch seconds) to epoch seconds, UTC assumed."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    cleaned = text.replace("Z", "+00:00")
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _read_stations(source) -> List[Station]:
    rows = list(csv.reader(_as_lines(source)))
    if not rows:
        raise IngestError("stations file is empty")
    out = []
    for row in rows[1:]:  # header row required
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise IngestError(f"stations row too short: {row!r}")
        out.append(Station(id=row[0].strip(), lon=float(row[1]), lat=float(row[2])))
    if not out:
        raise IngestError("stations file has a header but no stations")
    return out


def _as_lines(source):
    if hasattr(source, "read"):
        return source.read().splitlines()
    with open(source, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


def load_dataset(stations_source, readings_source, t0, dt, T,
                 value_range, warnings_out=None) -> STDataset:
    """Load station and reading files into an aligned STDataset.

    Args:
        stations_source: path or file-like; CSV with header, id/lon/lat.
        readings_source: path or file-like; CSV of id/timestamp/value.
        t0: epoch seconds (or ISO-8601 string) of step 0.
        dt: seconds per step.
        T: number of steps.
        value_range: (v_min, v_max); out-of-range values are clamped.
        warnings_out: optional list collecting clamp warnings.

    Raises:
        IngestError: empty readings, unknown station, duplicated
            (station, timestamp), timestamps off the step grid by more
            than one second, or timestamps outside [t0, t0 + T*dt).
    """
    if T < 2:
        raise IngestError("T must be >= 2")
    if isinstance(t0, str):
        t0 = parse_timestamp(t0)
    stations = _read_stations(stations_source)
    index_of = {s.id: i for i, s in enumerate(stations)}
    vmin, vmax = value_range

    values = np.full((len(stations), T), np.nan, dtype=np.float32)
    seen = set()
    n_clamped = 0
    rows = list(csv.reader(_as_lines(readings_source)))
    start = 0
    if rows:
        # tolerate an optional header row
        try:
            float(rows[0][2])
        except (IndexError, ValueError):
            start = 1
    n_readings = 0
    for lineno, row in enumerate(rows[start:], start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise IngestError(f"readings row {lineno} too short: {row!r}")
        sid = row[0].strip()
        if sid not in index_of:
            raise IngestError(f"readings row {lineno}: unknown station {sid!r}")
        ts = parse_timestamp(row[1])
        step_float = (ts - t0) / dt
        step = int(round(step_float))
        if abs(ts - (t0 + step * dt)) > 1:
            raise IngestError(
                f"readings row {lineno}: timestamp {row[1]} not aligned to "
                f"dt={dt}s within 1 second")
        if step < 0 or step >= T:
            raise IngestError(
                f"readings row {lineno}: timestamp {row[1]} falls at step "
                f"{step}, outside [0, {T})")
        key = (sid, step)
        if key in seen:
            raise IngestError(
                f"readings row {lineno}: duplicate reading for station {sid!r} "
                f"at step {step}")
        seen.add(key)
        v = float(row[2])
        if v < vmin or v > vmax:
            n_clamped += 1
            v = min(max(v, vmin), vmax)
        values[index_of[sid], step] = v
        n_readings += 1

    if n_readings == 0:
        raise IngestError("no readings")
    if n_clamped and warnings_out is not None:
        warnings_out.append(
            f"{n_clamped} reading(s) outside value_range [{vmin}, {vmax}] were clamped")

    series = [STSeries(station_id=s.id, values=values[i])
              for i, s in enumerate(stations)]
    return STDataset(stations=stations, series=series, t0=int(t0), dt=int(dt),
                     T=int(T), value_range=(float(vmin), float(vmax)))


def validate_dataset(dataset: STDataset, min_samples: int = 3) -> ValidationReport:
    """Exact per-slice sample counts plus sparse-slice warnings."""
    matrix = dataset.values_matrix()
    present = ~np.isnan(matrix)
    per_slice = present.sum(axis=0).astype(np.int64)
    total = dataset.S * dataset.T
    missing_fraction = float((total - int(present.sum())) / total)
    warnings = [
        f"slice {t}: only {int(c)} sample(s), fewer than min_samples={min_samples}"
        for t, c in enumerate(per_slice) if c < min_samples
    ]
    return ValidationReport(
        station_count=dataset.S,
        timestamp_count=dataset.T,
        missing_fraction=missing_fraction,
        per_slice_sample_counts=per_slice,
        warnings=warnings,
    )
