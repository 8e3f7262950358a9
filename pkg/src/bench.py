"""Wall-clock timing of experiment replicates."""

import json
import platform
import sys
import time
from typing import List, Optional

import numpy as np


class Benchmark:
    """Collect per-replicate durations and report percentiles."""

    def __init__(self):
        self.durations_s: List[float] = []
        self.start_time: Optional[float] = None
        self.end_time: Optional[float] = None

    def start(self):
        self.start_time = time.perf_counter()

    def record(self, seconds: float):
        self.durations_s.append(float(seconds))

    def stop(self):
        self.end_time = time.perf_counter()

    def results(self, experiment: str, workers: int = 1) -> dict:
        elapsed = (self.end_time or 0.0) - (self.start_time or 0.0)
        count = len(self.durations_s)
        if count:
            p50, p95, p99 = (float(v) for v in np.percentile(self.durations_s, [50, 95, 99]))
        else:
            p50 = p95 = p99 = 0.0
        return {
            "experiment": experiment,
            "replicates_processed": count,
            "replicates_per_sec": round(count / elapsed, 3) if elapsed > 0 else 0,
            "seconds_p50": round(p50, 4),
            "seconds_p95": round(p95, 4),
            "seconds_p99": round(p99, 4),
            "elapsed_s": round(elapsed, 3),
            "workers": workers,
            "cpu": platform.processor() or platform.machine(),
            "python": sys.version.split()[0],
        }

    def save(self, path: str, experiment: str, workers: int = 1):
        with open(path, "w") as f:
            json.dump(self.results(experiment, workers), f, indent=2)
