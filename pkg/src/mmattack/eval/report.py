"""Report files: metrics CSV, JSON summary, column schema and angle histograms.

Nothing time-dependent goes into these files, so equal configs give equal
bytes. Wall-clock time is only logged.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .metrics import MetricsReport, plateau

ASR_DEFINITION = (
    "retrieval: share of queries with the ground truth in the top-k before the attack that lose it "
    "after the query's pair is replaced by the adversarial pair; entailment: share of matched pairs "
    "predicted entail before the attack whose prediction changes"
)
METRIC_COLUMNS = {
    "setting": "attack setting (Perturbed@Target_slice cell or method name)",
    "task": "TR (image->text retrieval), IR (text->image retrieval) or VE (entailment)",
    "seed": "root seed of the run",
    "asr": "attack success rate in [0, 1]; empty when no sample was eligible",
    "eligible": "samples correct before the attack",
    "flipped": "eligible samples the attack broke",
    "error": "why the setting could not run on this model; empty otherwise",
}
SAMPLE_COLUMNS = {
    "series": "angle series (setting name, with the space for the angles command)",
    "angle": "angle between the image and text perturbations (radians)",
    "magnitude": "norm of the joint perturbation",
}
HIST_COLUMNS = {
    "bin_lo": "lower bin edge (radians)",
    "bin_hi": "upper bin edge (radians)",
    "count": "angle samples in [bin_lo, bin_hi); the last bin includes pi",
}
ANGLE_BINS = 18


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(list(METRIC_COLUMNS))
    for row in report.rows:
        w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    return out.getvalue()


def samples_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(list(SAMPLE_COLUMNS))
    for name, samples in sorted(report.angles.items()):
        for a, m in samples:
            w.writerow([name, _fmt(a), _fmt(m)])
    return out.getvalue()


def histogram(samples: list[tuple[float, float]], bins: int = ANGLE_BINS) -> tuple[np.ndarray, np.ndarray]:
    angles = np.array([a for a, _ in samples], dtype=float)
    return np.histogram(angles, bins=bins, range=(0.0, math.pi))


def histogram_csv(samples: list[tuple[float, float]], bins: int = ANGLE_BINS) -> str:
    counts, edges = histogram(samples, bins)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(list(HIST_COLUMNS))
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        w.writerow([_fmt(float(lo)), _fmt(float(hi)), int(c)])
    return out.getvalue()


def summary(report: MetricsReport, config: dict | None = None) -> dict:
    means = {}
    for name in report.settings():
        tasks = sorted({r["task"] for r in report.rows if r["setting"] == name})
        means[name] = {t: report.asr(name, t) for t in tasks}
    angles = {}
    for name, samples in sorted(report.angles.items()):
        a = np.array([s[0] for s in samples], dtype=float)
        m = np.array([s[1] for s in samples], dtype=float)
        angles[name] = {
            "n": len(samples),
            "skipped": report.skipped_angles.get(name, 0),
            "mean_angle": float(a.mean()) if len(a) else None,
            "mean_resultant": float(m.mean()) if len(m) else None,
        }
    out = {
        "asr_definition": ASR_DEFINITION,
        "config": config or {},
        "budgets": report.budgets,
        "seeds": report.seeds,
        "mean_asr": means,
        "angles": angles,
    }
    if any("[alpha=" in name for name in means):
        tasks = sorted({r["task"] for r in report.rows})
        out["plateau"] = {t: plateau(report, t) for t in tasks}
    return out


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def write_report(report: MetricsReport, out_dir, config: dict | None = None) -> list[Path]:
    """Write metrics.csv, summary.json, schema.json and one histogram CSV per angle series."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        path = out / name
        path.write_text(text)
        written.append(path)

    put("metrics.csv", metrics_csv(report))
    put("summary.json", json.dumps(summary(report, config), indent=2, sort_keys=True) + "\n")
    put("angle_samples.csv", samples_csv(report))
    hist_files = {}
    for name, samples in sorted(report.angles.items()):
        fname = f"angles_{_safe(name)}.csv"
        hist_files[fname] = name
        put(fname, histogram_csv(samples))
    schema = {
        "metrics.csv": METRIC_COLUMNS,
        "angle_samples.csv": SAMPLE_COLUMNS,
        "angles_*.csv": HIST_COLUMNS,
        "histograms": hist_files,
        "asr_definition": ASR_DEFINITION,
    }
    put("schema.json", json.dumps(schema, indent=2, sort_keys=True) + "\n")
    return written


def _opt_float(text: str) -> float | None:
    return float(text) if text else None


def read_report(run_dir) -> MetricsReport:
    """Load a directory written by ``write_report`` back into a MetricsReport."""
    run = Path(run_dir)
    report = MetricsReport()
    with open(run / "metrics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            report.rows.append({
                "setting": row["setting"],
                "task": row["task"],
                "seed": int(row["seed"]),
                "asr": _opt_float(row["asr"]),
                "eligible": int(row["eligible"]),
                "flipped": int(row["flipped"]),
                "error": row["error"],
            })
    samples = run / "angle_samples.csv"
    if samples.exists():
        with open(samples, newline="") as fh:
            for row in csv.DictReader(fh):
                report.angles.setdefault(row["series"], []).append((float(row["angle"]), float(row["magnitude"])))
    info = json.loads((run / "summary.json").read_text())
    for name, stats in info.get("angles", {}).items():
        report.angles.setdefault(name, [])
        report.skipped_angles[name] = stats.get("skipped", 0)
    report.budgets = info.get("budgets", {})
    report.seeds = list(info.get("seeds", []))
    return report
