"""Rendering of run artifacts: score/threshold plot, importance chart,
and a yearly anomaly-count trend table."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import ReportError
from .threshold import load_thresholds_csv

matplotlib.rcParams["svg.hashsalt"] = "cluvad"  # deterministic SVG ids


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def yearly_trend(timestamps, labels, steps_per_year: int = 365, year0: int = 0):
    """Anomaly count per year; every year in the covered span appears."""
    years = [year0 + int(ts) // steps_per_year for ts in timestamps]
    lo, hi = min(years), max(years)
    counts = {y: 0 for y in range(lo, hi + 1)}
    for y, flag in zip(years, labels):
        if flag:
            counts[y] += 1
    return counts


def emit_report(
    run_dir: str | Path,
    steps_per_year: int = 365,
    year0: int = 0,
) -> list[Path]:
    """Write report files for a completed run.

    Requires scores + thresholds artifacts; the importance chart is
    produced only when the attribution stage ran.
    """
    rd = Path(run_dir)
    if not (rd / "thresholds.csv").exists():
        raise ReportError("missing thresholds.csv: run the threshold stage first")
    out = rd / "report"
    out.mkdir(exist_ok=True)
    written: list[Path] = []

    series = load_thresholds_csv(rd / "thresholds.csv")

    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(series.timestamps, series.scores, lw=0.7, color="#33557a", label="anomaly score")
    ax.plot(series.timestamps, series.thresholds, lw=1.0, color="#d1495b", label="dynamic threshold")
    flagged = series.labels
    ax.scatter(series.timestamps[flagged], series.scores[flagged], s=14, color="#d1495b",
               zorder=3, label="anomaly")
    ax.set_xlabel("timestamp")
    ax.set_ylabel("score")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    _save_svg(fig, out / "score_threshold.svg")
    written.append(out / "score_threshold.svg")

    trend = yearly_trend(series.timestamps, series.labels, steps_per_year, year0)
    with open(out / "trend.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "anomaly_count"])
        for year in sorted(trend):
            writer.writerow([year, trend[year]])
    written.append(out / "trend.csv")

    if (rd / "importance.json").exists():
        ranking = json.loads((rd / "importance.json").read_text(encoding="utf-8"))
        entries = ranking["ranking"]
        names = [e["feature"] for e in entries]
        values = [e["importance"] for e in entries]
        fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 1), 3.5))
        ax.bar(range(len(names)), values, color="#33557a")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("importance")
        fig.tight_layout()
        _save_svg(fig, out / "importance.svg")
        written.append(out / "importance.svg")

    return written
