import numpy as np
import pandas as pd
import pytest

from flexlens import ingest, synthgen


def hourly(start: str, values, tz="UTC") -> pd.Series:
    idx = pd.date_range(pd.Timestamp(start).tz_localize(tz), periods=len(values),
                        freq="h")
    return pd.Series([np.nan if v is None else float(v) for v in values],
                     index=idx, name="energy")


def make_frame(energy: pd.Series, lme: pd.Series | float = 0.5) -> pd.DataFrame:
    if not isinstance(lme, pd.Series):
        lme = pd.Series(float(lme), index=energy.index, name="lme")
    return ingest.align(ingest.EnergySeries("t", energy), ingest.LmeSeries("g", lme))


def calibrated_facility(seed: int):
    """Realistic 92-day facility: jittered daily curtailment plus a band of
    mild underclocking dips ending just under a known fraction of full load."""
    idx = synthgen.hourly_index("2023-07-01T00:00Z", 92 * 24)
    rng = np.random.default_rng(seed + 10_000)
    grid = synthgen.GridSpec(lme_mean=0.4,
                             diurnal_amplitude=float(rng.uniform(0.1, 0.25)),
                             noise_sigma=0.01, seed=seed)
    lme, _ = synthgen.gen_lme(grid, idx)
    target = float(rng.choice(np.round(np.arange(0.78, 0.925, 0.01), 2)))
    spec = synthgen.FacilitySpec(
        f"f{seed}", base_load=float(rng.uniform(5, 130)),
        curtail_depth=float(rng.uniform(0.55, 0.99)), schedule_mode="daily",
        window=(int(rng.integers(10, 16)), int(rng.integers(18, 23))),
        schedule_jitter=0.5, noise=0.001,
        underclock_frac=float(rng.uniform(0.5, 0.6)),
        underclock_depth=1.0 - target - 0.005, underclock_depth_lo=0.02,
        seed=seed + 500)
    energy, truth = synthgen.gen_facility(spec, lme)
    frame = ingest.align(ingest.EnergySeries(spec.facility_id, energy),
                         ingest.LmeSeries("g", lme))
    return frame, truth


@pytest.fixture
def scheduled_facility():
    """Deep 14:00-21:00 daily curtailer on a diurnal grid, 92 days."""
    idx = synthgen.hourly_index("2023-07-01T00:00Z", 92 * 24)
    grid = synthgen.GridSpec(lme_mean=0.4, diurnal_amplitude=0.15,
                             noise_sigma=0.01, seed=11)
    lme, _ = synthgen.gen_lme(grid, idx)
    spec = synthgen.FacilitySpec("f18ish", base_load=6.0, curtail_depth=0.95,
                                 schedule_mode="daily", window=(14, 21),
                                 noise=0.002, seed=7)
    energy, truth = synthgen.gen_facility(spec, lme)
    frame = ingest.align(ingest.EnergySeries("f18ish", energy),
                         ingest.LmeSeries("g", lme))
    return frame, truth, lme
