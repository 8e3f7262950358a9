"""Tests for summary statistics."""

import math

import pytest
from src.metrics import load_rows, loglog_slope, median, render_summary_table, scaling_ratio, summarize_rows


def test_median_skips_missing_values():
    """Test median over finite values only."""
    assert median([3.0, None, 1.0, float("nan"), 2.0]) == 2.0
    assert median([None]) is None


def test_loglog_slope():
    """Test slope -1/2 for values proportional to n^{-1/2}."""
    ns = [100, 400, 1600]
    slope = loglog_slope(ns, [1 / math.sqrt(n) for n in ns])
    assert slope == pytest.approx(-0.5)
    assert loglog_slope([100], [1.0]) is None
    assert loglog_slope([100, 400], [1.0, 0.0]) is None


def test_scaling_ratio():
    """Test value(n_hi)/value(n_lo) and missing entries."""
    assert scaling_ratio({400: 2.0, 1600: 0.5}, 1600, 400) == 0.25
    assert scaling_ratio({400: 0.0, 1600: 0.5}, 1600, 400) is None
    assert scaling_ratio({400: 2.0}, 1600, 400) is None


def test_summarize_rows_skips_failed():
    """Test per-n medians over ok rows only."""
    rows = [
        {"n": "100", "status": "ok", "alo": "1.0"},
        {"n": "100", "status": "ok", "alo": "3.0"},
        {"n": "100", "status": "failed", "alo": "100.0"},
        {"n": "200", "status": "ok", "alo": ""},
    ]
    per_n = summarize_rows(rows, ["alo"])
    assert per_n == {100: {"alo": 2.0}, 200: {"alo": None}}


def test_load_rows(tmp_path):
    """Test reading a results CSV into dicts."""
    path = tmp_path / "results.csv"
    path.write_text("n,status,alo\n100,ok,1.5\n")
    assert load_rows(str(path)) == [{"n": "100", "status": "ok", "alo": "1.5"}]


def test_render_summary_table():
    """Test the markdown layout with a missing cell."""
    table = render_summary_table({400: {"alo": 1.23456}, 1600: {"alo": None}}, ["alo"])
    lines = table.splitlines()
    assert lines[0] == "| Metric | n=400 | n=1600 |"
    assert lines[1] == "| --- | --- | --- |"
    assert lines[2] == "| alo | 1.235 | - |"
