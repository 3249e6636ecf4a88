"""Per-facility engineered metrics: uptime, curtailment dynamics and alignment.

Undefined metrics (too few events, no flagged hours, constant series) come
back as None, never zero; zero is a meaningful value for several of these.
Standard deviations are sample (n-1) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import pandas as pd

from .detect import CurtailmentEvent


class MetricsError(ValueError):
    """Raised for degenerate metric inputs."""


@dataclass
class FacilityMetrics:
    facility_id: str
    uptime_pct: float | None
    cm: float | None            # curtailment magnitude, %
    cr: float | None            # curtailment regularity, hours
    me: float | None            # maximum hourly energy, MWh
    nae: float | None           # avoided / max energy, tons CO2 per MWh
    er: float | None            # avoided / induced, dimensionless
    lmev: float | None          # sample std of hourly LME, tons CO2 per MWh
    avoided: float | None       # tons CO2
    induced: float | None       # tons CO2
    pearson_r: float | None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def uptime_pct(flags: pd.Series, valid: pd.Series) -> float:
    """Share of valid hours not flagged as curtailing, in percent."""
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise MetricsError("no valid hours")
    return 100.0 * (n_valid - int((flags & valid).sum())) / n_valid


def curtailment_magnitude(frame: pd.DataFrame, flags: pd.Series) -> float | None:
    """Depth of the best-performing curtailment hours, in percent.

    100 x (1 - mean of the lowest quartile of flagged-hour energies / mean of
    unflagged-hour energies). The lowest-quartile subset has ceil(0.25 n)
    elements, at least one. Undefined without both flagged and unflagged hours.
    """
    energy = frame["energy"]
    flagged = energy[flags & energy.notna()].to_numpy(dtype=float)
    unflagged = energy[~flags & energy.notna()].to_numpy(dtype=float)
    if len(flagged) == 0 or len(unflagged) == 0:
        return None
    k = max(1, math.ceil(0.25 * len(flagged)))
    lowest = np.sort(flagged)[:k]
    return 100.0 * (1.0 - float(np.mean(lowest)) / float(np.mean(unflagged)))


def curtailment_regularity(events: list[CurtailmentEvent]) -> float | None:
    """Dispersion of event start times-of-day, in hours.

    Sample standard deviation of start times as seconds since midnight,
    divided by 3600. Undefined with fewer than two events.
    """
    if len(events) < 2:
        return None
    seconds = np.array([e.start.hour * 3600 + e.start.minute * 60 + e.start.second
                        for e in events], dtype=float)
    return float(np.std(seconds, ddof=1)) / 3600.0


def max_energy(series: pd.Series) -> float:
    """Highest non-null hourly consumption over the window, MWh."""
    if series.notna().sum() == 0:
        raise MetricsError("all-null energy series")
    return float(series.max())


def normalized_avoided(avoided: float, me: float) -> float:
    """Avoided emissions per MWh of peak consumption."""
    if me <= 0:
        raise MetricsError(f"maximum energy must be positive, got {me}")
    return avoided / me


def emissions_ratio(avoided: float, induced: float) -> float | None:
    """Avoided over induced emissions; undefined when nothing was induced."""
    if induced == 0:
        return None
    return avoided / induced


def lme_variability(lme: pd.Series) -> float | None:
    """Sample standard deviation of the facility's hourly LME values."""
    vals = lme.dropna()
    if len(vals) < 2:
        return None
    return float(np.std(vals.to_numpy(dtype=float), ddof=1))


def pearson_r(x: pd.Series, y: pd.Series) -> float | None:
    """Product-moment correlation over paired non-null hours; None if constant."""
    mask = x.notna() & y.notna()
    xv = x[mask].to_numpy(dtype=float)
    yv = y[mask].to_numpy(dtype=float)
    if len(xv) < 2:
        return None
    xd = xv - xv.mean()
    yd = yv - yv.mean()
    sx = float(np.sqrt(np.sum(xd * xd)))
    sy = float(np.sqrt(np.sum(yd * yd)))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.sum(xd * yd)) / (sx * sy)


def facility_metrics(facility_id: str, frame: pd.DataFrame, flags: pd.Series,
                     valid: pd.Series, events: list[CurtailmentEvent],
                     avoided: float, induced: float) -> FacilityMetrics:
    """Assemble the full metric vector for one facility."""
    me = max_energy(frame["energy"])
    return FacilityMetrics(
        facility_id=facility_id,
        uptime_pct=uptime_pct(flags, valid),
        cm=curtailment_magnitude(frame, flags),
        cr=curtailment_regularity(events),
        me=me,
        nae=normalized_avoided(avoided, me) if me > 0 else None,
        er=emissions_ratio(avoided, induced),
        lmev=lme_variability(frame["lme"]),
        avoided=avoided,
        induced=induced,
        pearson_r=pearson_r(frame["energy"], frame["lme"]),
    )
