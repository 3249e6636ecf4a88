"""Synthetic facility fleets with known curtailment schedules and emissions truth.

Serves as the validation oracle for the whole pipeline: every generated
facility records its true event windows, its true counterfactual baseline,
and the exact avoided-emissions total implied by them, all computed
independently of the detection and accounting code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .detect import CurtailmentEvent


class SynthError(ValueError):
    """Raised for invalid generator specs."""


@dataclass
class GridSpec:
    region_id: str = "grid"
    lme_mean: float = 0.45           # tons CO2/MWh
    diurnal_amplitude: float = 0.15  # tons CO2/MWh
    regime_switch_prob: float = 0.0  # per-hour chance of a gas<->coal style step
    regime_delta: float = 0.2        # tons CO2/MWh added while in the high regime
    negative_hour_prob: float = 0.0
    noise_sigma: float = 0.0         # additive, tons CO2/MWh
    peak_hour: int = 17
    seed: int = 0

    def __post_init__(self):
        for p in (self.regime_switch_prob, self.negative_hour_prob):
            if not 0.0 <= p <= 1.0:
                raise SynthError(f"probability out of [0, 1]: {p}")


@dataclass
class FacilitySpec:
    facility_id: str = "facility"
    base_load: float = 100.0       # MWh per hour at full power
    curtail_depth: float = 0.9     # fraction of base load shed in a window
    schedule_mode: str = "daily"   # "daily" | "lme_threshold" | "none"
    window: tuple[int, int] = (14, 21)  # [start_hour, end_hour) for daily mode
    lme_percentile: float = 75.0   # price-proxy trigger for lme_threshold mode
    schedule_jitter: float = 0.0   # hours, sigma of the daily window shift
    noise: float = 0.0             # relative sigma of multiplicative load noise
    ramp: float = 0.0              # linear trend fraction across the span
    underclock_frac: float = 0.0      # share of non-curtailed hours mildly reduced
    underclock_depth: float = 0.1     # deepest relative reduction while underclocked
    underclock_depth_lo: float = 0.02  # shallowest; per-hour depth ~ U(lo, depth)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.curtail_depth <= 1.0:
            raise SynthError(f"curtail_depth out of [0, 1]: {self.curtail_depth}")
        if self.noise < 0:
            raise SynthError("noise must be non-negative")
        if not 0.0 <= self.underclock_frac <= 1.0:
            raise SynthError(f"underclock_frac out of [0, 1]: {self.underclock_frac}")
        if self.schedule_mode not in ("daily", "lme_threshold", "none"):
            raise SynthError(f"unknown schedule mode {self.schedule_mode!r}")


@dataclass
class GroundTruth:
    events: list[CurtailmentEvent]
    curtailed: pd.Series          # per-hour bool, the true schedule
    baseline: pd.Series           # per-hour counterfactual MWh (pre-noise)
    avoided_tons: float           # sum over true windows of (baseline - realized) x LME


def hourly_index(start: str | pd.Timestamp, hours: int) -> pd.DatetimeIndex:
    start = pd.Timestamp(start)
    if start.tz is None:
        start = start.tz_localize("UTC")
    return pd.date_range(start, periods=hours, freq="h")


def gen_lme(grid: GridSpec, index: pd.DatetimeIndex) -> tuple[pd.Series, float]:
    """Diurnal sinusoid plus regime steps and noise; returns (series, sample std)."""
    n = len(index)
    if n < 48:
        raise SynthError("span must be at least 48 hours")
    rng = np.random.default_rng(grid.seed)
    hours = index.hour.to_numpy()
    lme = grid.lme_mean + grid.diurnal_amplitude * np.sin(
        2.0 * np.pi * (hours - grid.peak_hour + 6) / 24.0)
    if grid.regime_switch_prob > 0:
        switches = rng.random(n) < grid.regime_switch_prob
        state = np.cumsum(switches) % 2
        lme = lme + state * grid.regime_delta
    if grid.noise_sigma > 0:
        lme = lme + rng.normal(0.0, grid.noise_sigma, n)
    if grid.negative_hour_prob > 0:
        neg = rng.random(n) < grid.negative_hour_prob
        lme = np.where(neg, -np.abs(rng.normal(0.02, 0.01, n)), lme)
    series = pd.Series(lme, index=index, name="lme")
    return series, float(np.std(lme, ddof=1))


def _daily_mask(index: pd.DatetimeIndex, window: tuple[int, int],
                jitter: float, rng: np.random.Generator) -> np.ndarray:
    start_h, end_h = window
    if not (0 <= start_h < 24 and 0 < end_h <= 24 and start_h < end_h):
        raise SynthError(f"bad daily window {window}")
    days = index.normalize()
    unique_days = days.unique()
    shifts = (np.round(rng.normal(0.0, jitter, len(unique_days))).astype(int)
              if jitter > 0 else np.zeros(len(unique_days), dtype=int))
    shift_by_day = dict(zip(unique_days, shifts))
    hours = index.hour.to_numpy()
    mask = np.zeros(len(index), dtype=bool)
    for day, shift in shift_by_day.items():
        lo = int(np.clip(start_h + shift, 0, 23))
        hi = int(np.clip(end_h + shift, lo + 1, 24))
        mask |= np.asarray(days == day) & (hours >= lo) & (hours < hi)
    return mask


def gen_facility(spec: FacilitySpec, lme: pd.Series) -> tuple[pd.Series, GroundTruth]:
    """Generate one facility's load series plus its ground truth.

    Load = base x (1 + ramp drift) x (1 - depth inside scheduled windows),
    then multiplicative Gaussian noise clipped at zero. Truth (windows,
    counterfactual baseline, avoided total) is recorded against the realized
    post-noise series.
    """
    index = lme.index
    n = len(index)
    rng = np.random.default_rng(spec.seed)
    tfrac = np.arange(n) / max(n - 1, 1)
    baseline = spec.base_load * (1.0 + spec.ramp * tfrac)

    if spec.schedule_mode == "daily":
        mask = _daily_mask(index, spec.window, spec.schedule_jitter, rng)
    elif spec.schedule_mode == "lme_threshold":
        cut = np.percentile(lme.to_numpy(), spec.lme_percentile)
        mask = lme.to_numpy() > cut
    else:
        mask = np.zeros(n, dtype=bool)
    if spec.curtail_depth == 0.0:
        mask = np.zeros(n, dtype=bool)

    load = np.where(mask, baseline * (1.0 - spec.curtail_depth), baseline)
    if spec.underclock_frac > 0:
        # mild reductions that are operational noise, not curtailment events
        under = (rng.random(n) < spec.underclock_frac) & ~mask
        lo = min(spec.underclock_depth_lo, spec.underclock_depth)
        # deeper reductions are more common, giving the sensitivity sweep a
        # sharp rise right at the deep edge of the underclock band
        depths = lo + (spec.underclock_depth - lo) * np.sqrt(rng.uniform(0, 1, n))
        load = np.where(under, load * (1.0 - depths), load)
    if spec.noise > 0:
        load = load * (1.0 + rng.normal(0.0, spec.noise, n))
    load = np.clip(load, 0.0, None)

    energy = pd.Series(load, index=index, name="energy")
    truth = GroundTruth(
        events=_mask_events(index, load, mask),
        curtailed=pd.Series(mask, index=index, name="curtailed"),
        baseline=pd.Series(baseline, index=index, name="baseline"),
        avoided_tons=float(np.sum((baseline - load)[mask] * lme.to_numpy()[mask])),
    )
    return energy, truth


def _mask_events(index: pd.DatetimeIndex, load: np.ndarray,
                 mask: np.ndarray) -> list[CurtailmentEvent]:
    events = []
    edges = np.flatnonzero(np.diff(np.r_[False, mask, False]))
    for s, e in zip(edges[::2], edges[1::2]):
        seg = load[s:e]
        events.append(CurtailmentEvent(index[s], index[e - 1], int(e - s),
                                       float(np.min(seg)), float(np.mean(seg))))
    return events


def ground_truth_avoided(energy: pd.Series, truth: GroundTruth,
                         lme: pd.Series) -> float:
    """True counterfactual emissions difference, independent of any detector.

    Sum over true-window hours of (true baseline - realized load) x LME.
    """
    mask = truth.curtailed.to_numpy()
    diff = truth.baseline.to_numpy() - energy.to_numpy(dtype=float)
    return float(np.sum(diff[mask] * lme.to_numpy(dtype=float)[mask]))


# ---------------------------------------------------------------------------
# fleet files

def load_fleet_spec(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SynthError(f"cannot read fleet spec: {exc}") from exc
    if "facilities" not in doc or not doc["facilities"]:
        raise SynthError("fleet spec lists no facilities")
    return doc


def generate_fleet(doc: dict, out_dir: str | Path) -> Path:
    """Write energy/LME CSVs, a manifest and truth.json for a fleet spec.

    Facilities referencing the same grid share one LME series. RNG streams
    are keyed (fleet seed, role index) so facilities are independent and the
    output is byte-stable for a given spec.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fleet_seed = int(doc.get("seed", 0))
    start = doc.get("start", "2023-07-01T00:00Z")
    hours = int(doc.get("days", 92)) * 24
    index = hourly_index(start, hours)

    grids = {}
    grid_docs = doc.get("grids", {"default": {}})
    for gi, (name, gdoc) in enumerate(sorted(grid_docs.items())):
        spec = GridSpec(region_id=name, seed=fleet_seed * 1000 + gi,
                        **{k: v for k, v in gdoc.items() if k != "region_id"})
        series, lmev = gen_lme(spec, index)
        path = out / f"lme_{name}.csv"
        write_series_csv(path, series)
        grids[name] = (spec, series, lmev, path)

    manifest = {"facilities": []}
    truth_doc = {}
    for fi, fdoc in enumerate(doc["facilities"]):
        fdoc = dict(fdoc)
        grid_name = fdoc.pop("grid", next(iter(grids)))
        if grid_name not in grids:
            raise SynthError(f"facility references unknown grid {grid_name!r}")
        sched = fdoc.pop("schedule", {})
        spec = FacilitySpec(
            facility_id=str(fdoc.pop("facility_id", f"f{fi:02d}")),
            schedule_mode=sched.get("mode", "none"),
            window=tuple(sched.get("window", (14, 21))),
            lme_percentile=float(sched.get("lme_percentile", 75.0)),
            seed=fleet_seed * 1000 + 500 + fi,
            **fdoc)
        _, lme_series, lmev, lme_path = grids[grid_name]
        energy, truth = gen_facility(spec, lme_series)
        energy_path = out / f"{spec.facility_id}_energy.csv"
        write_series_csv(energy_path, energy)
        manifest["facilities"].append({
            "facility_id": spec.facility_id,
            "energy": energy_path.name,
            "lme": lme_path.name,
            "region": grid_name,
            "timezone": "UTC",
        })
        truth_doc[spec.facility_id] = {
            "events": [[e.start.isoformat(), e.end.isoformat()] for e in truth.events],
            "avoided_tons": truth.avoided_tons,
            "curtailed_hours": int(truth.curtailed.sum()),
            "grid_lmev": lmev,
        }

    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "truth.json").write_text(json.dumps(truth_doc, indent=2) + "\n")
    return manifest_path


def write_series_csv(path: Path, series: pd.Series) -> None:
    """CSV in the ingest format: header `timestamp,value`, 17 significant digits."""
    lines = ["timestamp,value"]
    for ts, v in series.items():
        val = "" if pd.isna(v) else format(float(v), ".17g")
        lines.append(f"{ts.strftime('%Y-%m-%dT%H:%M:%SZ')},{val}")
    path.write_text("\n".join(lines) + "\n")
