"""Curtailment-hour flagging, event extraction and knee-based threshold selection.

An hour is flagged when its energy falls strictly below a fraction of that
day's maximum non-null consumption. The operative fraction per facility is
picked by a knee-point search over a threshold sensitivity sweep; a fixed
fraction can be forced instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

log = logging.getLogger("flexlens.detect")

DEFAULT_GRID = np.round(np.arange(0.50, 1.0 + 1e-9, 0.01), 2)
DEFAULT_SENSITIVITY = 1.0
FALLBACK_THRESHOLD = 0.90  # fleet default when no knee stands out


class DetectError(ValueError):
    """Raised for degenerate detection inputs."""


@dataclass
class CurtailmentEvent:
    start: pd.Timestamp
    end: pd.Timestamp  # last flagged hour (inclusive)
    duration_hours: int
    min_energy: float
    mean_energy: float


@dataclass
class ThresholdProfile:
    facility_id: str
    grid: np.ndarray
    dr_percent: np.ndarray  # flagged fraction of valid hours at each grid point
    chosen_threshold: float
    selection_mode: str  # "kneedle" | "fixed"
    fell_back: bool = False
    difference_curve: np.ndarray | None = field(default=None, repr=False)


def daily_max(frame: pd.DataFrame) -> pd.Series:
    """Per-row maximum non-null energy of the row's calendar day."""
    return frame["energy"].groupby(frame.index.normalize()).transform("max")


def flag_hours(frame: pd.DataFrame, threshold: float) -> tuple[pd.Series, pd.Series]:
    """Flag hours strictly below threshold x daily max.

    Returns (flags, valid): null-energy hours are never flagged and are not
    valid; a fully-null day produces no flags.
    """
    if not 0 < threshold <= 1:
        raise DetectError(f"threshold must be in (0, 1], got {threshold}")
    valid = frame["energy"].notna()
    flags = frame["energy"] < threshold * daily_max(frame)  # NaN compares False
    return flags, valid


def dr_percent(flags: pd.Series, valid: pd.Series) -> float:
    """Flagged share of valid hours, in [0, 1]."""
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DetectError("no valid hours")
    return float(flags.sum()) / n_valid


def extract_events(frame: pd.DataFrame, flags: pd.Series) -> list[CurtailmentEvent]:
    """Maximal runs of consecutive flagged hours; runs may span midnight.

    A null hour inside an otherwise flagged stretch splits the run in two.
    """
    events: list[CurtailmentEvent] = []
    f = flags.to_numpy(dtype=bool)
    if not f.any():
        return events
    idx = frame.index
    energy = frame["energy"].to_numpy(dtype=float)
    # positions g where the step from idx[g] to idx[g + 1] is not one hour
    gap_after = np.flatnonzero(np.diff(idx.asi8) != 3_600_000_000_000)
    edges = np.flatnonzero(np.diff(np.r_[False, f, False]))
    for s, e in zip(edges[::2], edges[1::2]):  # [s, e) flagged
        # split where timestamps are not hourly-contiguous
        cut = s
        j0, j1 = np.searchsorted(gap_after, [s, e - 1])
        for g in gap_after[j0:j1]:
            events.append(_make_event(idx, energy, cut, g + 1))
            cut = g + 1
        events.append(_make_event(idx, energy, cut, e))
    return events


def _make_event(idx, energy, s, e) -> CurtailmentEvent:
    seg = energy[s:e]
    return CurtailmentEvent(
        start=idx[s], end=idx[e - 1], duration_hours=int(e - s),
        min_energy=float(np.min(seg)), mean_energy=float(np.mean(seg)))


def sweep_dr_percent(frame: pd.DataFrame, grid: np.ndarray) -> np.ndarray:
    """dr_percent at every grid threshold, vectorized over the sweep."""
    energy = frame["energy"].to_numpy(dtype=float)
    dmax = daily_max(frame).to_numpy(dtype=float)
    valid = ~np.isnan(energy)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DetectError("no valid hours")
    with np.errstate(invalid="ignore"):
        flagged = energy[:, None] < np.asarray(grid)[None, :] * dmax[:, None]
    return flagged.sum(axis=0) / n_valid


def kneedle_index(x: np.ndarray, y: np.ndarray,
                  sensitivity: float = DEFAULT_SENSITIVITY) -> int | None:
    """Index of the knee of y(x) via the Kneedle difference curve.

    Both axes are min-max normalized. The curve is oriented to the
    concave-increasing case (a convex curve is mirrored first), the knee is
    the interior argmax of (y_n - x_n), and it must clear the sensitivity
    margin S x mean x-spacing or None is returned.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3 or y.max() == y.min():
        return None
    xn = (x - x.min()) / (x.max() - x.min())
    yn = (y - y.min()) / (y.max() - y.min())
    diff = yn - xn
    if diff.mean() < 0:  # curve sits below the chord: convex increasing
        diff = -diff
    interior = int(np.argmax(diff[1:-1])) + 1
    margin = sensitivity * float(np.mean(np.diff(xn)))
    if diff[interior] <= margin:
        return None
    return interior


def knee_threshold(frame: pd.DataFrame, facility_id: str = "",
                   grid: np.ndarray = DEFAULT_GRID,
                   sensitivity: float = DEFAULT_SENSITIVITY) -> ThresholdProfile:
    """Pick the facility threshold as the knee of the dr_percent sweep.

    Falls back to the fleet default 0.90 (with a warning) when the sweep is
    degenerate or no interior knee clears the sensitivity margin.
    """
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 5 or grid.min() > 0.5 or grid.max() < 1.0:
        raise DetectError("sweep grid must have >= 5 points spanning at least [0.5, 1.0]")
    dr = sweep_dr_percent(frame, grid)
    knee = kneedle_index(grid, dr, sensitivity)
    if knee is None:
        log.warning("facility %s: no knee found, falling back to %.2f",
                    facility_id, FALLBACK_THRESHOLD)
        return ThresholdProfile(facility_id, grid, dr, FALLBACK_THRESHOLD,
                                "kneedle", fell_back=True)
    return ThresholdProfile(facility_id, grid, dr, float(grid[knee]), "kneedle")


def fixed_threshold(frame: pd.DataFrame, facility_id: str, value: float,
                    grid: np.ndarray = DEFAULT_GRID) -> ThresholdProfile:
    """Threshold profile for a user-forced fraction (sweep still reported)."""
    if not 0 < value <= 1:
        raise DetectError(f"fixed threshold must be in (0, 1], got {value}")
    dr = sweep_dr_percent(frame, np.asarray(grid, dtype=float))
    return ThresholdProfile(facility_id, np.asarray(grid, dtype=float), dr,
                            float(value), "fixed")


def fleet_knee(profiles: list[ThresholdProfile],
               sensitivity: float = DEFAULT_SENSITIVITY) -> float:
    """Single system-wide knee from the fleet-mean dr_percent sweep."""
    if not profiles:
        raise DetectError("no facilities")
    grid = profiles[0].grid
    mean_dr = np.mean([p.dr_percent for p in profiles], axis=0)
    knee = kneedle_index(grid, mean_dr, sensitivity)
    if knee is None:
        return FALLBACK_THRESHOLD
    return float(grid[knee])
