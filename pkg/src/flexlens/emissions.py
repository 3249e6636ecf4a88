"""Avoided- and induced-emissions accounting against hourly marginal factors.

Avoided emissions for a flagged hour are (daily baseline - energy) x LME,
where the baseline is the day's mean non-curtailed consumption; a day whose
valid hours are all flagged falls back to its daily maximum. Induced
emissions are total consumption times hourly LME over all non-null hours.
Negative results (negative LME, or consumption above baseline) are kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd


class EmissionsError(ValueError):
    """Raised for degenerate emissions inputs."""


@dataclass
class BaselineProfile:
    per_day: pd.Series  # MWh baseline indexed by day
    source: pd.Series   # "mean-of-unflagged" | "daily-max-fallback" per day


def daily_baselines(frame: pd.DataFrame, flags: pd.Series) -> BaselineProfile:
    """Per-day counterfactual consumption level.

    Mean of non-null unflagged hours; when every non-null hour of a day is
    flagged, the day's maximum stands in and the fallback is recorded.
    Fully-null days carry no baseline (NaN, source "no-data").
    """
    days = frame.index.normalize()
    energy = frame["energy"]
    unflagged = energy.where(~flags)
    mean_unflagged = unflagged.groupby(days).mean()
    day_max = energy.groupby(days).max()
    any_valid = energy.notna().groupby(days).any()

    baseline = mean_unflagged.where(mean_unflagged.notna(), day_max)
    source = pd.Series("mean-of-unflagged", index=baseline.index)
    source[mean_unflagged.isna() & any_valid] = "daily-max-fallback"
    source[~any_valid] = "no-data"
    return BaselineProfile(baseline, source)


def avoided_hour(energy: float, baseline: float, lmef: float, flagged: bool) -> float:
    """Avoided tons for one hour: (baseline - energy) x LME if flagged, else 0."""
    if not flagged:
        return 0.0
    return (baseline - energy) * lmef


def hourly_avoided(frame: pd.DataFrame, flags: pd.Series,
                   baselines: BaselineProfile) -> pd.Series:
    """Per-hour avoided tons; zero for unflagged or null-energy hours."""
    days = frame.index.normalize()
    base = baselines.per_day.reindex(days).to_numpy(dtype=float)
    energy = frame["energy"].to_numpy(dtype=float)
    lme = frame["lme"].to_numpy(dtype=float)
    f = flags.to_numpy(dtype=bool) & ~np.isnan(energy) & ~np.isnan(lme)
    avoided = np.where(f, (base - energy) * lme, 0.0)
    return pd.Series(avoided, index=frame.index, name="avoided")


def total_avoided(frame: pd.DataFrame, flags: pd.Series,
                  baselines: BaselineProfile) -> float:
    """Total avoided tons over the window (sum of hourly_avoided)."""
    return float(hourly_avoided(frame, flags, baselines).sum())


def induced_emissions(frame: pd.DataFrame) -> float:
    """Total marginal emissions of actual consumption: sum of energy x LME."""
    product = frame["energy"] * frame["lme"]
    return float(product.sum(skipna=True))
