"""ECDF tables and figures for experiment results."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import QualityReport, RunRecord, ecdf, quality_ratios  # noqa: E402


def write_ecdf_csv(path, reports: dict[str, QualityReport]) -> None:
    """Long-format table: approach, ratio, fraction."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("approach", "ratio", "fraction"))
        for name, report in sorted(reports.items()):
            for value, fraction in report.ecdf:
                writer.writerow((name, repr(value), repr(fraction)))


def write_summary_csv(path, reports: dict[str, QualityReport]) -> None:
    quantiles = sorted({q for r in reports.values() for q in r.quantiles})
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("approach", "instances", "skipped", *(f"q{q:g}" for q in quantiles)))
        for name, report in sorted(reports.items()):
            writer.writerow((name, len(report.ratios), report.skipped,
                             *(repr(report.quantiles[q]) if q in report.quantiles else "" for q in quantiles)))


def _step_plot(ax, curves: dict[str, list[tuple[float, float]]], xlabel: str, log_x: bool = False) -> None:
    for name, points in sorted(curves.items()):
        if not points:
            continue
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.step([xs[0], *xs], [0.0, *ys], where="post", label=name)
    if log_x:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("fraction of instances")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize="small")


def plot_quality_ecdf(path, reports: dict[str, QualityReport], baseline: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    _step_plot(ax, {name: r.ecdf for name, r in reports.items()}, f"objective ratio to {baseline}")
    ax.axvline(1.0, color="grey", lw=0.8, ls="--")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_time_ecdf(path, records: list[RunRecord]) -> None:
    times: dict[str, list[float]] = {}
    for r in records:
        if r.objective_ms is not None:
            times.setdefault(r.approach, []).append(r.wall_s)
    fig, ax = plt.subplots(figsize=(6, 4))
    _step_plot(ax, {name: ecdf(values) for name, values in times.items()}, "wall time (s)", log_x=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(records: list[RunRecord], baseline: str, out_dir) -> list[Path]:
    """Quality-ratio ECDF and summary CSVs plus quality and time figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = quality_ratios(records, baseline)
    paths = [out_dir / "quality_ecdf.csv", out_dir / "quality_summary.csv",
             out_dir / "quality_ecdf.png", out_dir / "time_ecdf.png"]
    write_ecdf_csv(paths[0], reports)
    write_summary_csv(paths[1], reports)
    plot_quality_ecdf(paths[2], reports, baseline)
    plot_time_ecdf(paths[3], records)
    return paths
