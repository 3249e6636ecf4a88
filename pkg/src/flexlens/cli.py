"""Command-line orchestration: synth, analyze, regress, classify, report.

Stages are independently runnable on the previous stage's outputs. All
numeric artifacts are serialized with 17 significant digits so every report
scalar is exactly recomputable from the intermediate CSVs; display rounding
happens only in the human-readable report.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, analysis, detect, emissions, ingest, metrics, synthgen

log = logging.getLogger("flexlens")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2

METRIC_COLUMNS = ["facility_id", "uptime_pct", "cm", "cr", "me", "nae", "er",
                  "lmev", "avoided", "induced", "pearson_r"]
REGRESSION_CANDIDATES = ["cm", "cr", "me", "lmev"]
REGRESSION_BASELINE = ["uptime_pct"]


class InputError(ValueError):
    """User-facing input problem: bad flags, files, or preconditions."""


@dataclass
class RunConfig:
    manifest: Path
    out_dir: Path
    window: str = "auto"             # "auto" | "YYYY-MM-DD:YYYY-MM-DD" (inclusive days)
    threshold_mode: str = "kneedle"  # "kneedle" | "fixed:<v>"
    quadrant_mode: str = "mean"
    jobs: int = 1
    seed: int = 0

    def fixed_threshold(self) -> float | None:
        if self.threshold_mode == "kneedle":
            return None
        if self.threshold_mode.startswith("fixed:"):
            try:
                v = float(self.threshold_mode.split(":", 1)[1])
            except ValueError:
                raise InputError(f"bad threshold mode {self.threshold_mode!r}") from None
            if not 0 < v <= 1:
                raise InputError(f"fixed threshold must be in (0, 1], got {v}")
            return v
        raise InputError(f"bad threshold mode {self.threshold_mode!r}")


def fmt(x) -> str:
    """17-significant-digit serialization; empty string for nulls."""
    if x is None:
        return ""
    x = float(x)
    if x != x:  # NaN
        return ""
    return format(x, ".17g")


def _round_trip(x):
    """Float carrying full precision into json (json uses repr, lossless)."""
    return None if x is None or (isinstance(x, float) and np.isnan(x)) else float(x)


# ---------------------------------------------------------------------------
# per-facility pipeline

@dataclass
class FacilityResult:
    facility_id: str
    frame: pd.DataFrame
    profile: detect.ThresholdProfile
    flags: pd.Series
    valid: pd.Series
    events: list
    baselines: emissions.BaselineProfile
    avoided_hourly: pd.Series
    metrics: metrics.FacilityMetrics
    stamps: list[str] | None = None  # lazily formatted index, shared by writers


def parse_window(window: str) -> tuple[pd.Timestamp, pd.Timestamp] | None:
    if window == "auto":
        return None
    try:
        start_s, end_s = window.split(":")
        start = pd.Timestamp(start_s).tz_localize("UTC")
        end = pd.Timestamp(end_s).tz_localize("UTC") + pd.Timedelta(hours=23)
    except (ValueError, TypeError):
        raise InputError(f"bad window {window!r}, expected START:END dates") from None
    if start >= end:
        raise InputError("window start must precede end")
    return start, end


def analyze_facility(entry: ingest.ManifestEntry,
                     window: tuple[pd.Timestamp, pd.Timestamp],
                     fixed: float | None,
                     loaded: tuple[ingest.EnergySeries, ingest.LmeSeries] | None = None,
                     ) -> FacilityResult:
    """ingest -> repair -> detect -> emissions -> metrics for one facility."""
    if loaded is not None:
        energy, lme = loaded
    else:
        energy = ingest.ingest_facility(entry)
        lme = ingest.ingest_lme(entry)
    energy.values = ingest.fill_gaps(energy.values, *window)
    lme.values = ingest.fill_gaps(lme.values, *window)
    energy.values = ingest.repair_outliers(energy.values)
    if entry.capacity_mw is not None:
        ingest.check_capacity(energy.values, entry.capacity_mw, entry.facility_id)
    frame = ingest.align(energy, lme)

    if fixed is None:
        profile = detect.knee_threshold(frame, entry.facility_id)
    else:
        profile = detect.fixed_threshold(frame, entry.facility_id, fixed)
    flags, valid = detect.flag_hours(frame, profile.chosen_threshold)
    events = detect.extract_events(frame, flags)
    baselines = emissions.daily_baselines(frame, flags)
    avoided_hourly = emissions.hourly_avoided(frame, flags, baselines)
    avoided = float(avoided_hourly.sum())
    induced = emissions.induced_emissions(frame)
    fm = metrics.facility_metrics(entry.facility_id, frame, flags, valid,
                                  events, avoided, induced)
    return FacilityResult(entry.facility_id, frame, profile, flags, valid,
                          events, baselines, avoided_hourly, fm)


# ---------------------------------------------------------------------------
# artifact writers

def _stamps_for(res: FacilityResult) -> list[str]:
    """ISO-8601 stamps computed once per facility; the pipeline keeps UTC throughout."""
    if res.stamps is None:
        base = np.datetime_as_string(res.frame.index.asi8.view("M8[ns]"), unit="s")
        res.stamps = [s + "+00:00" for s in base]
    return res.stamps


def write_facility_artifacts(out: Path, res: FacilityResult) -> None:
    fdir = out / "facilities" / res.facility_id
    fdir.mkdir(parents=True, exist_ok=True)

    chosen = res.profile.chosen_threshold
    lines = ["threshold,dr_percent,chosen"]
    for g, d in zip(res.profile.grid, res.profile.dr_percent):
        lines.append(f"{fmt(g)},{fmt(d)},{str(bool(abs(g - chosen) < 1e-12)).lower()}")
    (fdir / "thresholds.csv").write_text("\n".join(lines) + "\n")

    lines = ["start,end,duration_hours,min_energy_mwh,mean_energy_mwh"]
    for e in res.events:
        lines.append(f"{e.start.isoformat()},{e.end.isoformat()},"
                     f"{e.duration_hours},{fmt(e.min_energy)},{fmt(e.mean_energy)}")
    (fdir / "events.csv").write_text("\n".join(lines) + "\n")

    days = res.frame.index.normalize()
    base = res.baselines.per_day.reindex(days).to_numpy(dtype=float)
    stamps = _stamps_for(res)
    lines = ["timestamp,energy_mwh,lme_tons_per_mwh,flagged,baseline_mwh,avoided_tons"]
    for ts, e, l, f, b, a in zip(stamps, res.frame["energy"].to_numpy(),
                                 res.frame["lme"].to_numpy(),
                                 res.flags.to_numpy(), base,
                                 res.avoided_hourly.to_numpy()):
        lines.append(f"{ts},{fmt(e)},{fmt(l)},"
                     f"{'true' if f else 'false'},{fmt(b)},{fmt(a)}")
    (fdir / "emissions.csv").write_text("\n".join(lines) + "\n")


def write_metrics_csv(out: Path, rows: list[metrics.FacilityMetrics]) -> None:
    lines = [",".join(METRIC_COLUMNS)]
    for m in rows:
        d = m.as_dict()
        lines.append(",".join([d["facility_id"]] +
                              [fmt(d[c]) for c in METRIC_COLUMNS[1:]]))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")


def read_metrics_csv(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise InputError(f"metrics file not found: {path}")
    df = pd.read_csv(path)
    missing = set(METRIC_COLUMNS) - set(df.columns)
    if missing:
        raise InputError(f"metrics file lacks columns: {sorted(missing)}")
    return df


def run_regression(df: pd.DataFrame) -> dict:
    """Stepwise regression of avoided emissions on uptime plus engineered metrics."""
    cols = REGRESSION_BASELINE + REGRESSION_CANDIDATES + ["avoided"]
    usable = df.dropna(subset=cols)
    dropped = sorted(set(df["facility_id"]) - set(usable["facility_id"]))
    n_needed = len(REGRESSION_BASELINE) + 2
    if len(usable) < n_needed:
        return {"skipped": True,
                "notice": f"need at least {n_needed} facilities with complete "
                          f"metrics, have {len(usable)}",
                "dropped_facilities": dropped}
    candidates = {c: usable[c].to_numpy(dtype=float)
                  for c in REGRESSION_BASELINE + REGRESSION_CANDIDATES}
    y = usable["avoided"].to_numpy(dtype=float)
    baseline_fit = analysis._fit_subset(candidates, y, REGRESSION_BASELINE, "avoided")
    fit, trace = analysis.stepwise_select(candidates, y,
                                          baseline=REGRESSION_BASELINE,
                                          response="avoided")
    return {"skipped": False,
            "dropped_facilities": dropped,
            "baseline": baseline_fit.as_dict(),
            "final": fit.as_dict(),
            "trace": trace.as_dict()}


def run_quadrants(df: pd.DataFrame, mode: str) -> dict:
    usable = df.dropna(subset=["uptime_pct", "avoided"])
    if len(usable) < 2:
        return {"skipped": True,
                "notice": "need at least 2 facilities to classify"}
    rows = [(str(r.facility_id), float(r.uptime_pct), float(r.avoided))
            for r in usable.itertuples()]
    labels = analysis.quadrant_classify(rows, mode)
    return {"skipped": False,
            "mode": mode,
            "uptime_cut": labels[0].uptime_cut,
            "avoided_cut": labels[0].avoided_cut,
            "assignments": [{"facility_id": a.facility_id,
                             "uptime": a.uptime_label,
                             "avoided": a.avoided_label,
                             "quadrant": a.quadrant} for a in labels]}


def write_quadrants_csv(out: Path, q: dict) -> None:
    lines = ["facility_id,uptime_label,avoided_label,quadrant"]
    for a in q.get("assignments", []):
        lines.append(f"{a['facility_id']},{a['uptime']},{a['avoided']},{a['quadrant']}")
    (out / "quadrants.csv").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# plots (plot-data CSVs + minimal static SVGs)

def _svg_polyline(points: list[tuple[float, float]], color: str, width=1.5) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
            f'points="{pts}"/>')


def _scale(vals: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float):
    if hi == lo:
        return np.full_like(vals, (out_lo + out_hi) / 2.0)
    return out_lo + (vals - lo) / (hi - lo) * (out_hi - out_lo)


def write_line_svg(path: Path, xs: np.ndarray, series: dict[str, np.ndarray],
                   marks: np.ndarray | None = None, title: str = "") -> None:
    """Self-contained SVG line chart; marks draws dots on flagged x positions."""
    w, h, pad = 900, 280, 30
    finite = np.concatenate([v[np.isfinite(v)] for v in series.values()]) if series else np.array([0.0])
    lo, hi = (float(finite.min()), float(finite.max())) if len(finite) else (0.0, 1.0)
    sx = _scale(np.asarray(xs, float), float(xs[0]), float(xs[-1]), pad, w - pad)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}">',
             f'<text x="{pad}" y="18" font-size="13" font-family="sans-serif">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{w - 2 * pad}" height="{h - 2 * pad}" '
             f'fill="none" stroke="#ccc"/>']
    colors = ["#1f77b4", "#d62728", "#2ca02c"]
    for (name, vals), color in zip(series.items(), colors):
        vals = np.asarray(vals, float)
        ok = np.isfinite(vals)
        sy = _scale(vals, lo, hi, h - pad, pad)
        parts.append(_svg_polyline(list(zip(sx[ok], sy[ok])), color))
    if marks is not None and marks.any():
        first = next(iter(series.values()))
        sy = _scale(np.asarray(first, float), lo, hi, h - pad, pad)
        for x, y, m, ok in zip(sx, sy, marks, np.isfinite(first)):
            if m and ok:
                parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5" fill="#d62728"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def emit_plots(out: Path, results: list[FacilityResult], quadrants: dict) -> None:
    """Per-facility load and LME plots plus the fleet scatter, as CSV + SVG."""
    pdir = out / "plots"
    pdir.mkdir(parents=True, exist_ok=True)
    for res in results:
        stamps = _stamps_for(res)
        lines = ["timestamp,energy_mwh,flagged"]
        for ts, e, f in zip(stamps, res.frame["energy"].to_numpy(),
                            res.flags.to_numpy()):
            lines.append(f"{ts},{fmt(e)},{'true' if f else 'false'}")
        (pdir / f"{res.facility_id}_load.csv").write_text("\n".join(lines) + "\n")
        lines = ["timestamp,lme_tons_per_mwh"]
        for ts, l in zip(stamps, res.frame["lme"].to_numpy()):
            lines.append(f"{ts},{fmt(l)}")
        (pdir / f"{res.facility_id}_lme.csv").write_text("\n".join(lines) + "\n")

        xs = np.arange(len(res.frame))
        write_line_svg(pdir / f"{res.facility_id}_load.svg", xs,
                       {"energy": res.frame["energy"].to_numpy(float)},
                       marks=res.flags.to_numpy(bool),
                       title=f"{res.facility_id} load (flagged hours marked)")
        write_line_svg(pdir / f"{res.facility_id}_lme.svg", xs,
                       {"lme": res.frame["lme"].to_numpy(float)},
                       title=f"{res.facility_id} LME")

    lines = ["facility_id,uptime_pct,avoided_tons,quadrant"]
    qmap = {a["facility_id"]: a["quadrant"]
            for a in quadrants.get("assignments", [])}
    for res in results:
        m = res.metrics
        lines.append(f"{m.facility_id},{fmt(m.uptime_pct)},{fmt(m.avoided)},"
                     f"{qmap.get(m.facility_id, '')}")
    if not quadrants.get("skipped", True):
        lines.append(f"__uptime_cut__,{fmt(quadrants['uptime_cut'])},,")
        lines.append(f"__avoided_cut__,,{fmt(quadrants['avoided_cut'])},")
    (pdir / "fleet_scatter.csv").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    doc = synthgen.load_fleet_spec(args.spec)
    manifest = synthgen.generate_fleet(doc, args.out)
    print(f"wrote fleet to {args.out} (manifest: {manifest})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    config = RunConfig(manifest=Path(args.manifest), out_dir=Path(args.out),
                       window=args.window, threshold_mode=args.threshold_mode,
                       quadrant_mode=args.quadrant_mode, jobs=args.jobs,
                       seed=args.seed)
    fixed = config.fixed_threshold()
    entries = ingest.load_manifest(config.manifest)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    def load_one(entry):
        try:
            return ingest.ingest_facility(entry), ingest.ingest_lme(entry)
        except ingest.IngestError as exc:
            raise InputError(f"facility {entry.facility_id} (ingest): {exc}") from exc

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            loaded = list(pool.map(load_one, entries))
    else:
        loaded = [load_one(entry) for entry in entries]

    window = parse_window(config.window)
    if window is None:
        spans = [s.values for pair in loaded for s in pair]
        window = ingest.common_window(spans)

    def run_one(pair):
        entry, data = pair
        try:
            return analyze_facility(entry, window, fixed, loaded=data)
        except (ingest.IngestError, detect.DetectError, metrics.MetricsError,
                emissions.EmissionsError) as exc:
            raise InputError(f"facility {entry.facility_id}: {exc}") from exc

    work = list(zip(entries, loaded))
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(run_one, work))
    else:
        results = [run_one(pair) for pair in work]
    results.sort(key=lambda r: r.facility_id)

    for res in results:
        write_facility_artifacts(out, res)
    write_metrics_csv(out, [r.metrics for r in results])

    df = read_metrics_csv(out / "metrics.csv")
    regression = run_regression(df)
    quadrants = run_quadrants(df, config.quadrant_mode)
    (out / "regression.json").write_text(json.dumps(regression, indent=2) + "\n")
    write_quadrants_csv(out, quadrants)
    emit_plots(out, results, quadrants)

    report = build_report(config, window, results, regression, quadrants)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"analyzed {len(results)} facilities -> {out}")
    if regression.get("skipped"):
        print(f"regression skipped: {regression['notice']}")
    if quadrants.get("skipped"):
        print(f"quadrants skipped: {quadrants['notice']}")
    return EXIT_OK


def build_report(config: RunConfig, window, results, regression, quadrants) -> dict:
    facilities = {}
    for res in results:
        m = res.metrics.as_dict()
        facilities[res.facility_id] = {
            "metrics": {k: _round_trip(v) for k, v in m.items() if k != "facility_id"},
            "threshold": {
                "chosen": res.profile.chosen_threshold,
                "mode": res.profile.selection_mode,
                "fell_back": res.profile.fell_back,
            },
            "n_events": len(res.events),
            "events": [[e.start.isoformat(), e.end.isoformat(), e.duration_hours]
                       for e in res.events],
            "baseline_fallback_days": int(
                (res.baselines.source == "daily-max-fallback").sum()),
        }
    return {
        "version": __version__,
        "config": {
            "manifest": str(config.manifest),
            "window": [window[0].isoformat(), window[1].isoformat()],
            "threshold_mode": config.threshold_mode,
            "quadrant_mode": config.quadrant_mode,
            "seed": config.seed,
        },
        "facilities": facilities,
        "regression": regression,
        "quadrants": quadrants,
    }


def cmd_regress(args) -> int:
    df = read_metrics_csv(Path(args.metrics))
    regression = run_regression(df)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "regression.json").write_text(json.dumps(regression, indent=2) + "\n")
    if regression.get("skipped"):
        print(f"regression skipped: {regression['notice']}")
    else:
        final = regression["final"]
        print(f"final model: {[t['name'] for t in final['terms']]} "
              f"adj R^2 = {final['adj_r_squared']:.4f}")
    return EXIT_OK


def cmd_classify(args) -> int:
    df = read_metrics_csv(Path(args.metrics))
    quadrants = run_quadrants(df, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_quadrants_csv(out, quadrants)
    if quadrants.get("skipped"):
        print(f"quadrants skipped: {quadrants['notice']}")
    else:
        print(f"classified {len(quadrants['assignments'])} facilities "
              f"(mode={args.mode})")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise InputError(f"no report.json under {run_dir}; run analyze first")
    report = json.loads(report_path.read_text())
    lines = [f"# Fleet report ({len(report['facilities'])} facilities)", ""]
    lines.append(f"Window: {report['config']['window'][0]} .. "
                 f"{report['config']['window'][1]}")
    lines.append("")
    lines.append("| facility | uptime % | avoided t | induced t | ER | threshold | events |")
    lines.append("|---|---|---|---|---|---|---|")
    for fid, blk in report["facilities"].items():
        m = blk["metrics"]
        def disp(v, nd=2):
            return "-" if v is None else f"{v:.{nd}f}"
        lines.append(f"| {fid} | {disp(m['uptime_pct'])} | {disp(m['avoided'])} "
                     f"| {disp(m['induced'])} | {disp(m['er'], 4)} "
                     f"| {blk['threshold']['chosen']:.2f} | {blk['n_events']} |")
    reg = report.get("regression", {})
    lines.append("")
    if reg.get("skipped"):
        lines.append(f"Regression skipped: {reg['notice']}")
    else:
        final = reg["final"]
        lines.append(f"Stepwise model on `avoided` (adj R^2 "
                     f"{final['adj_r_squared']:.3f}):")
        for t in final["terms"]:
            lines.append(f"- {t['name']}: beta={t['beta']:.4g} se={t['se']:.4g} "
                         f"t={t['t']:.3g} p={t['p']:.3g}")
    quads = report.get("quadrants", {})
    if not quads.get("skipped", True):
        lines.append("")
        lines.append(f"Quadrants (mode={quads['mode']}, cuts uptime "
                     f"{quads['uptime_cut']:.2f} / avoided {quads['avoided_cut']:.2f}):")
        for a in quads["assignments"]:
            lines.append(f"- {a['facility_id']}: {a['quadrant']}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexlens",
        description="Curtailment detection and marginal-emissions accounting")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic fleet")
    p.add_argument("--spec", required=True, help="fleet spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="run the full pipeline on a fleet")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", default="auto",
                   help="'auto' or START:END dates (inclusive)")
    p.add_argument("--threshold-mode", default="kneedle",
                   help="'kneedle' or 'fixed:<v>'")
    p.add_argument("--quadrant-mode", default="mean", choices=["mean", "p75"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("regress", help="stepwise regression from metrics.csv")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("classify", help="performance quadrants from metrics.csv")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="mean", choices=["mean", "p75"])
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="human-readable report from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("FLEXLENS_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ingest.IngestError, synthgen.SynthError,
            detect.DetectError, metrics.MetricsError, emissions.EmissionsError,
            analysis.AnalysisError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - internal invariant violations
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
