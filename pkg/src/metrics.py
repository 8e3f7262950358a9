"""Summary statistics over experiment rows: medians, log-log slopes, scaling ratios."""

import csv
import math
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np


def median(values: Iterable[Optional[float]]) -> Optional[float]:
    """Median of the finite values, None when there are none."""
    finite = [float(v) for v in values if v is not None and math.isfinite(float(v))]
    return float(np.median(finite)) if finite else None


def loglog_slope(ns: Sequence[float], values: Sequence[Optional[float]]) -> Optional[float]:
    """Least-squares slope of log(value) against log(n) over the positive points."""
    pairs = [(n, v) for n, v in zip(ns, values) if v is not None and v > 0]
    if len(pairs) < 2:
        return None
    log_n = np.log([n for n, _ in pairs])
    log_v = np.log([v for _, v in pairs])
    return float(np.polyfit(log_n, log_v, 1)[0])


def scaling_ratio(by_n: Dict[int, Optional[float]], n_hi: int, n_lo: int) -> Optional[float]:
    """value(n_hi) / value(n_lo)."""
    hi, lo = by_n.get(n_hi), by_n.get(n_lo)
    if hi is None or lo is None or lo == 0:
        return None
    return hi / lo


def _as_float(value) -> Optional[float]:
    if value is None or value == "":
        return None
    return float(value)


def summarize_rows(rows: List[dict], metrics: Sequence[str]) -> Dict[int, Dict[str, Optional[float]]]:
    """Median of every metric per n over the rows with status ok."""
    grouped: Dict[int, List[dict]] = {}
    for row in rows:
        if row.get("status") != "ok":
            continue
        grouped.setdefault(int(row["n"]), []).append(row)
    return {
        n: {m: median(_as_float(r.get(m)) for r in group) for m in metrics}
        for n, group in sorted(grouped.items())
    }


def load_rows(path: str) -> List[dict]:
    """Load experiment rows from CSV."""
    with open(path, "r", newline="") as f:
        return list(csv.DictReader(f))


def render_summary_table(per_n: Dict[int, Dict[str, Optional[float]]], metrics: Sequence[str]) -> str:
    """Markdown table of per-n medians."""
    ns = sorted(per_n)
    lines = [
        "| Metric | " + " | ".join(f"n={n}" for n in ns) + " |",
        "| --- |" + " --- |" * len(ns),
    ]
    for m in metrics:
        cells = []
        for n in ns:
            v = per_n[n].get(m)
            cells.append("-" if v is None else f"{v:.4g}")
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    return "\n".join(lines)
