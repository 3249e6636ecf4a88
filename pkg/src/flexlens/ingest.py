"""Parsing, resampling, gap filling, outlier repair and alignment of facility series.

All series are held as pandas objects with a UTC DatetimeIndex. Missing hours
are NaN; no interpolation is ever performed, absent hours simply stay null.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

log = logging.getLogger("flexlens.ingest")

HOUR = pd.Timedelta(hours=1)
OUTLIER_FACTOR = 1.5


class IngestError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class EnergySeries:
    facility_id: str
    values: pd.Series  # hourly MWh, NaN = missing hour
    origin_resolution: str = "hourly"  # "hourly" | "quarter-hourly"
    partial_hours: pd.Series | None = None  # True where an hour had 1-3 quarter readings


@dataclass
class LmeSeries:
    region_id: str
    values: pd.Series  # hourly tons CO2/MWh; negative values allowed


@dataclass
class ManifestEntry:
    facility_id: str
    energy_path: Path
    lme_path: Path
    region: str = ""
    capacity_mw: float | None = None
    timezone: str = "UTC"


def parse_series(data: bytes | str, kind: str = "energy", timezone: str = "UTC") -> pd.Series:
    """Parse a `timestamp,value` CSV into a UTC-indexed value series.

    Energy values must be non-negative (empty cells become NaN); LME values may
    be negative. Duplicate timestamps and malformed rows are errors.
    """
    if kind not in ("energy", "lme"):
        raise IngestError(f"unknown series kind {kind!r}")
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    if not lines or lines[0].strip().lower().replace(" ", "") != "timestamp,value":
        raise IngestError("missing or invalid header, expected 'timestamp,value'")

    stamps: list[str] = []
    raw_vals: list[str] = []
    line_nos: list[int] = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise IngestError(f"malformed row at line {no}: {line!r}")
        stamps.append(parts[0].strip())
        raw_vals.append(parts[1].strip())
        line_nos.append(no)
    if not stamps:
        raise IngestError("no readings")

    try:
        idx = pd.to_datetime(pd.Series(stamps), format="ISO8601")
    except (ValueError, TypeError):
        # re-parse one by one to report the offending line
        for no, s in zip(line_nos, stamps):
            try:
                pd.Timestamp(s)
            except (ValueError, TypeError):
                raise IngestError(f"malformed timestamp at line {no}: {s!r}") from None
        raise IngestError("inconsistent timestamp formats (mixed naive/offset)") from None
    if idx.dt.tz is None:
        idx = idx.dt.tz_localize(timezone)
    idx = idx.dt.tz_convert("UTC")

    vals = pd.to_numeric(pd.Series(raw_vals).replace("", np.nan), errors="coerce")
    bad = vals.isna() & pd.Series(raw_vals).str.len().gt(0)
    if bad.any():
        no = line_nos[int(np.flatnonzero(bad)[0])]
        raise IngestError(f"malformed value at line {no}")
    if kind == "energy" and (vals.dropna() < 0).any():
        no = line_nos[int(np.flatnonzero((vals < 0).to_numpy())[0])]
        raise IngestError(f"negative energy value at line {no}")

    series = pd.Series(vals.to_numpy(dtype=float), index=pd.DatetimeIndex(idx), name=kind)
    series = series.sort_index()
    dup = series.index.duplicated()
    if dup.any():
        raise IngestError(f"duplicate timestamp {series.index[dup][0].isoformat()}")
    return series


def detect_resolution(series: pd.Series) -> str:
    """Classify a raw series as hourly or quarter-hourly from its timestamps."""
    minutes = series.index.minute
    if (minutes == 0).all() and (series.index.second == 0).all():
        return "hourly"
    if (minutes % 15 == 0).all() and (series.index.second == 0).all():
        return "quarter-hourly"
    raise IngestError("timestamps are neither on an hourly nor a quarter-hour grid")


def resample_to_hourly(series: pd.Series) -> tuple[pd.Series, pd.Series]:
    """Average quarter-hour readings into hourly values.

    Each hour becomes the arithmetic mean of its available quarter-hour
    readings; an hour with no readings is NaN. Returns (hourly, partial) where
    partial flags hours that had 1-3 readings instead of the full 4.
    """
    detect_resolution(series)  # raises if off the quarter-hour grid
    grouper = series.groupby(series.index.floor("h"))
    hourly = grouper.mean()
    counts = grouper.count()
    partial = (counts > 0) & (counts < 4)
    hourly.name = series.name
    return hourly, partial


def fill_gaps(series: pd.Series, start: pd.Timestamp, end: pd.Timestamp) -> pd.Series:
    """Reindex onto the full hourly span [start, end]; absent hours become NaN."""
    span = pd.date_range(start, end, freq="h", tz="UTC")
    return series.reindex(span)


def _nearest_valid(repaired: np.ndarray, raw: np.ndarray, outlier: np.ndarray,
                   i: int, limit: float) -> float:
    """Nearest non-null, non-outlier value around index i; ties prefer earlier."""
    n = len(raw)
    for k in range(1, n):
        j = i - k
        if j >= 0 and not outlier[j] and not np.isnan(repaired[j]):
            return repaired[j]
        j = i + k
        if j < n and not np.isnan(raw[j]) and raw[j] <= limit:
            return raw[j]
    return raw[i]  # pathological: nothing valid anywhere, keep as-is


def repair_outliers(values: pd.Series) -> pd.Series:
    """Replace values above 1.5x the previous day's maximum with the nearest valid value.

    The pass runs left to right on calendar days, so a replaced value never
    seeds further outliers; the first day (and any day without a preceding
    day that has data) is exempt. Fully-null days are skipped when looking
    back for the reference maximum.
    """
    v = values.to_numpy(dtype=float, copy=True)
    raw = values.to_numpy(dtype=float)
    days = values.index.normalize()
    starts = np.flatnonzero(np.r_[True, (days[1:] != days[:-1])])
    bounds = np.r_[starts, len(v)]
    outlier = np.zeros(len(v), dtype=bool)

    prev_max = np.nan
    for s, e in zip(bounds[:-1], bounds[1:]):
        if not np.isnan(prev_max):
            limit = OUTLIER_FACTOR * prev_max
            if np.any(v[s:e] > limit):  # NaN compares False
                for i in range(s, e):
                    if not np.isnan(v[i]) and v[i] > limit:
                        outlier[i] = True
                        v[i] = _nearest_valid(v, raw, outlier, i, limit)
        seg = v[s:e]
        if not np.all(np.isnan(seg)):
            prev_max = np.nanmax(seg)
    return pd.Series(v, index=values.index, name=values.name)


def align(energy: EnergySeries, lme: LmeSeries) -> pd.DataFrame:
    """Merge energy and LME on their common hourly span and add calendar columns.

    The frame is restricted to the timestamp intersection; an empty
    intersection is an error.
    """
    common = energy.values.index.intersection(lme.values.index)
    if len(common) == 0:
        raise IngestError(
            f"energy and LME spans do not overlap for facility {energy.facility_id}")
    frame = pd.DataFrame({
        "energy": energy.values.reindex(common),
        "lme": lme.values.reindex(common),
    }, index=common)
    frame.index.name = "timestamp"
    return add_calendar_columns(frame)


def add_calendar_columns(frame: pd.DataFrame) -> pd.DataFrame:
    """Derive hour, day, weekday and month columns from the index (idempotent)."""
    frame = frame.copy()
    frame["hour"] = frame.index.hour
    frame["day"] = frame.index.day
    frame["weekday"] = frame.index.weekday
    frame["month"] = frame.index.month
    return frame


def check_capacity(series: pd.Series, capacity_mw: float, facility_id: str) -> None:
    """Reject hourly energies that exceed the declared site capacity."""
    over = series[series > capacity_mw]
    if len(over):
        raise IngestError(
            f"facility {facility_id}: {len(over)} hours exceed declared capacity "
            f"{capacity_mw} MW (first at {over.index[0].isoformat()})")


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read the fleet manifest (JSON) and resolve file paths relative to it."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    root = path.parent
    for item in doc.get("facilities", []):
        try:
            entries.append(ManifestEntry(
                facility_id=str(item["facility_id"]),
                energy_path=root / item["energy"],
                lme_path=root / item["lme"],
                region=str(item.get("region", "")),
                capacity_mw=item.get("capacity_mw"),
                timezone=str(item.get("timezone", "UTC")),
            ))
        except KeyError as exc:
            raise IngestError(f"manifest entry missing key {exc}") from exc
    if not entries:
        raise IngestError("no facilities in manifest")
    seen: set[str] = set()
    for entry in entries:
        if entry.facility_id in seen:
            raise IngestError(f"duplicate facility_id {entry.facility_id!r} in manifest")
        seen.add(entry.facility_id)
    return entries


def ingest_facility(entry: ManifestEntry) -> EnergySeries:
    """Parse, resample and gap-fill one facility's energy file."""
    raw = parse_series(Path(entry.energy_path).read_bytes(), "energy", entry.timezone)
    resolution = detect_resolution(raw)
    partial = None
    if resolution == "quarter-hourly":
        raw, partial = resample_to_hourly(raw)
    filled = fill_gaps(raw, raw.index[0].floor("h"), raw.index[-1].floor("h"))
    if partial is not None:
        partial = partial.reindex(filled.index, fill_value=False)
    return EnergySeries(entry.facility_id, filled, resolution, partial)


def ingest_lme(entry: ManifestEntry) -> LmeSeries:
    """Parse and gap-fill one facility's LME file."""
    raw = parse_series(Path(entry.lme_path).read_bytes(), "lme", entry.timezone)
    if detect_resolution(raw) != "hourly":
        raise IngestError(f"LME series for {entry.facility_id} is not hourly")
    return LmeSeries(entry.region, fill_gaps(raw, raw.index[0], raw.index[-1]))


def common_window(series: Sequence[pd.Series]) -> tuple[pd.Timestamp, pd.Timestamp]:
    """Maximal hourly span shared by every series (the auto study window)."""
    start = max(s.index[0] for s in series)
    end = min(s.index[-1] for s in series)
    if start > end:
        raise IngestError("facility spans have no common window")
    return start, end
