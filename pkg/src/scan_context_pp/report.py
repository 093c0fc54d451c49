#
# Scan Context PP - Benchmark Report Output
#
# Copyright (C) 2024 The scan-context-pp contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.
#
"""Benchmark output files and console summary.

``pr_curve.csv`` and ``matches.csv`` depend only on inputs and configuration, so they
are byte-identical across runs. ``timing.csv`` and the timing block of ``report.json``
are measurements and vary.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.table import Table

from .evaluation import Report

logger = logging.getLogger(__name__)

PR_CURVE_FILE = "pr_curve.csv"
MATCHES_FILE = "matches.csv"
TIMING_FILE = "timing.csv"
REPORT_FILE = "report.json"

PR_CURVE_FIELDS = ("tau", "precision", "recall", "f1", "kld")
MATCHES_FIELDS = ("query_id", "match_id", "distance", "shift", "pose", "correct")
TIMING_FIELDS = ("query_id", "describe_ms", "tree_ms", "align_ms", "total_ms")


def _num(value: float | None) -> str:
    return "" if value is None else f"{value:.6g}"


def write_pr_curve_csv(path: Path, report: Report) -> None:
    """One row per swept threshold."""
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PR_CURVE_FIELDS)
        for row in report.curve.rows:
            writer.writerow(
                [_num(row.tau), _num(row.precision), _num(row.recall), _num(row.f1), _num(row.kld)],
            )


def write_matches_csv(path: Path, report: Report) -> None:
    """Best candidate of every sampled query; empty cells when nothing was retrieved."""
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MATCHES_FIELDS)
        for row in report.matches:
            writer.writerow(
                [
                    row.query_id,
                    "" if row.match_id is None else row.match_id,
                    _num(row.distance),
                    "" if row.shift is None else row.shift,
                    _num(row.pose),
                    int(row.correct),
                ],
            )


def write_timing_csv(path: Path, report: Report) -> None:
    """Per-stage latency of every query in milliseconds."""
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TIMING_FIELDS)
        for row in report.timings:
            writer.writerow(
                [
                    row.query_id,
                    f"{row.describe_ms:.4f}",
                    f"{row.tree_ms:.4f}",
                    f"{row.align_ms:.4f}",
                    f"{row.total_ms:.4f}",
                ],
            )


def report_summary(report: Report) -> dict[str, Any]:
    """The ``report.json`` document."""
    best = report.curve.best() if report.curve.rows else None
    stats = report.stats
    return {
        "kind": report.kind.value,
        "mode": report.mode,
        "queries": report.sampled,
        "auc": report.auc,
        "max_f1": best.f1 if best else 0.0,
        "max_f1_tau": best.tau if best else None,
        "precision_at_max_f1": best.precision if best else None,
        "recall_at_max_f1": best.recall if best else None,
        "kld_at_max_f1": best.kld if best else None,
        "timing_ms": report.timing_summary(),
        "pose_error_mean": report.pose_error_means(),
        "entries": {
            "places": stats.places,
            "original": stats.original_entries,
            "augmented": stats.augmented_entries,
        },
        "rebuilds": stats.rebuilds,
        "rebuild_time_share": report.rebuild_share,
    }


def write_report(report: Report, out_dir: str | Path) -> dict[str, Path]:
    """Write the four benchmark files into ``out_dir`` (created if missing)."""
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "pr_curve": directory / PR_CURVE_FILE,
        "matches": directory / MATCHES_FILE,
        "timing": directory / TIMING_FILE,
        "report": directory / REPORT_FILE,
    }
    write_pr_curve_csv(paths["pr_curve"], report)
    write_matches_csv(paths["matches"], report)
    write_timing_csv(paths["timing"], report)
    paths["report"].write_text(
        json.dumps(report_summary(report), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info("Wrote benchmark report to %s", directory)
    return paths


def render_summary(report: Report, console: Console | None = None) -> None:
    """Print a one-table summary of a benchmark run."""
    console = console or Console(stderr=True)
    summary = report_summary(report)
    timing = summary["timing_ms"]

    table = Table(
        title=f"{report.kind.value} / {report.mode}",
        show_header=True,
        header_style="bold cyan",
    )
    table.add_column("Metric", style="bold")
    table.add_column("Value", justify="right")
    table.add_row("Queries", str(summary["queries"]))
    table.add_row("AUC", f"{summary['auc']:.4f}")
    table.add_row("Max F1", f"{summary['max_f1']:.4f}")
    if summary["max_f1_tau"] is not None:
        table.add_row("  at tau", f"{summary['max_f1_tau']:.4f}")
        table.add_row("  precision", f"{summary['precision_at_max_f1']:.4f}")
        table.add_row("  recall", f"{summary['recall_at_max_f1']:.4f}")
        table.add_row("  KL-D", f"{summary['kld_at_max_f1']:.4f}")
    for stage in ("describe_ms", "tree_ms", "align_ms", "total_ms"):
        table.add_row(f"Mean {stage.removesuffix('_ms')} (ms)", f"{timing[stage]['mean']:.3f}")
    errors = summary["pose_error_mean"]
    if errors["yaw_deg"] is not None:
        table.add_row("Mean yaw error (deg)", f"{errors['yaw_deg']:.3f}")
    if errors["lateral_m"] is not None:
        table.add_row("Mean lateral error (m)", f"{errors['lateral_m']:.3f}")
    table.add_row("Rebuild time share", f"{summary['rebuild_time_share']:.1%}")
    console.print(table)
