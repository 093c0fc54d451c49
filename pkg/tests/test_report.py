"""Tests for benchmark output files and the console summary."""

import json
from io import StringIO
from pathlib import Path

import pytest
from rich.console import Console

from scan_context_pp.database import DatabaseStats
from scan_context_pp.descriptor import DescriptorKind
from scan_context_pp.evaluation import CurveRow, EvalCurve, MatchRow, Report, TimingRow
from scan_context_pp.report import (
    MATCHES_FILE,
    PR_CURVE_FILE,
    REPORT_FILE,
    TIMING_FILE,
    render_summary,
    report_summary,
    write_report,
)


@pytest.fixture
def report() -> Report:
    """A small two-query report with one correct match."""
    curve = EvalCurve(
        (
            CurveRow(0.1, 1.0, 0.5, 2 / 3, 0.0, tp=1, fp=0, fn=1),
            CurveRow(0.2, 0.5, 0.5, 0.5, 0.25, tp=1, fp=1, fn=1),
        ),
    )
    matches = [
        MatchRow(0, None, float("inf"), None, None, correct=False, matched=False),
        MatchRow(
            7,
            2,
            0.0812345678,
            2,
            12.0,
            correct=True,
            matched=True,
            yaw_error_deg=0.5,
        ),
    ]
    timings = [TimingRow(0, 1.0, 0.25, 0.0), TimingRow(7, 2.0, 0.5, 1.125)]
    stats = DatabaseStats(
        places=2,
        original_entries=2,
        augmented_entries=4,
        rebuilds=1,
        rebuild_seconds=0.5,
    )
    return Report(
        curve,
        matches,
        timings,
        DescriptorKind.POLAR,
        sampled=2,
        stats=stats,
        wall_seconds=2.0,
    )


def _lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


def test_write_report_files(tmp_path: Path, report: Report) -> None:
    """Test that all four files are written into a fresh directory."""
    paths = write_report(report, tmp_path / "out")

    assert set(paths) == {"pr_curve", "matches", "timing", "report"}
    assert paths["pr_curve"].name == PR_CURVE_FILE
    assert paths["matches"].name == MATCHES_FILE
    assert paths["timing"].name == TIMING_FILE
    assert paths["report"].name == REPORT_FILE
    assert all(path.exists() for path in paths.values())


def test_pr_curve_csv(tmp_path: Path, report: Report) -> None:
    """Test the curve header and six-significant-digit values."""
    paths = write_report(report, tmp_path)

    assert _lines(paths["pr_curve"]) == [
        "tau,precision,recall,f1,kld",
        "0.1,1,0.5,0.666667,0",
        "0.2,0.5,0.5,0.5,0.25",
    ]


def test_matches_csv(tmp_path: Path, report: Report) -> None:
    """Test that a query with no candidate leaves its match cells empty."""
    paths = write_report(report, tmp_path)

    assert _lines(paths["matches"]) == [
        "query_id,match_id,distance,shift,pose,correct",
        "0,,inf,,,0",
        "7,2,0.0812346,2,12,1",
    ]


def test_timing_csv(tmp_path: Path, report: Report) -> None:
    """Test per-stage latencies with a derived total."""
    paths = write_report(report, tmp_path)

    assert _lines(paths["timing"]) == [
        "query_id,describe_ms,tree_ms,align_ms,total_ms",
        "0,1.0000,0.2500,0.0000,1.2500",
        "7,2.0000,0.5000,1.1250,3.6250",
    ]


def test_report_json(tmp_path: Path, report: Report) -> None:
    """Test the summary document."""
    paths = write_report(report, tmp_path)
    summary = json.loads(paths["report"].read_text(encoding="utf-8"))

    assert summary["kind"] == "polar"
    assert summary["mode"] == "online"
    assert summary["queries"] == 2
    assert summary["auc"] == pytest.approx(0.5)
    assert summary["max_f1"] == pytest.approx(2 / 3)
    assert summary["max_f1_tau"] == pytest.approx(0.1)
    assert summary["kld_at_max_f1"] == 0.0
    assert summary["entries"] == {"places": 2, "original": 2, "augmented": 4}
    assert summary["rebuilds"] == 1
    assert summary["rebuild_time_share"] == pytest.approx(0.25)
    assert summary["timing_ms"]["total_ms"]["max"] == pytest.approx(3.625)
    assert summary["pose_error_mean"] == {"yaw_deg": 0.5, "lateral_m": None}


def test_summary_of_empty_curve(report: Report) -> None:
    """Test that a run without thresholds still summarizes."""
    report.curve = EvalCurve(())
    summary = report_summary(report)
    assert summary["max_f1"] == 0.0
    assert summary["max_f1_tau"] is None


def test_render_summary(report: Report) -> None:
    """Test the console table."""
    buffer = StringIO()
    render_summary(report, Console(file=buffer, width=100))
    output = buffer.getvalue()

    assert "polar / online" in output
    assert "AUC" in output
    assert "0.5000" in output
    assert "Mean yaw error (deg)" in output
    assert "Mean lateral error (m)" not in output
    assert "25.0%" in output
