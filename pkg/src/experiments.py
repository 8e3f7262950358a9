"""Desk-scale experiments E1-E5: replicate grids, CSV rows, JSON summaries."""

import csv
import dataclasses
import json
import logging
import math
import numbers
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from src.bench import Benchmark
from src.bounds import check_all, effective_mu
from src.curvature import a_hat, hat_matrix
from src.errors import AloError, DegenerateDenominator, ExperimentFailed, InvalidSpec
from src.gen import GENERATED_KINDS, ModelSpec, generate, parse_covariance, parse_noise, replicate_seed, sparse_coefficients
from src.metrics import loglog_slope, scaling_ratio, summarize_rows
from src.model import PENALTY_FAMILIES, PenaltySpec, contiguous_groups, parse_loss, parse_test_function
from src.risk import (
    alo_estimate,
    corrected_prediction_moments,
    df_ratio,
    generalization_error_mc,
    hat_diagonal_deviation,
    hat_ratio,
    hat_weight_deviation,
    loo_estimate,
    mf_estimate,
    mf_weight,
    rem_diagnostics,
    worker_count,
)
from src.solver import SolverConfig, fit

logger = logging.getLogger(__name__)

EXPERIMENT_IDS = ("E1", "E2", "E3", "E4", "E5")

BASE_FIELDS = (
    "seed", "n", "p", "replicate", "status", "reason",
    "kkt_residual", "iterations", "support_size", "bound_violations",
)
WEIGHT_FIELDS = ("discrepancy_sq", "weight_mf", "weight_df_ratio", "rem_sumsq")
METRIC_FIELDS: Dict[str, Tuple[str, ...]] = {
    "E1": ("hat_diag_dev", "rate", "hat_weight_dev", "hat_weight_scale"),
    "E2": WEIGHT_FIELDS,
    "E3": WEIGHT_FIELDS,
    "E4": (
        "alo", "loo", "mf_trace", "mf_df_ratio", "err_mc", "err_mc_se",
        "abs_alo_loo", "abs_mf_trace_loo", "abs_mf_df_ratio_loo", "abs_alo_mc",
        "z_mean", "z_var",
    ),
    "E5": ("weight_mf", "weight_hat_ratio", "scaled_gap"),
}

_DEFAULTS = {
    "E1": dict(loss="square", model="linear", noise="gaussian:1"),
    "E2": dict(loss="huber:1", model="robust", noise="student_t:2"),
    "E3": dict(loss="logistic", model="single_index", link="logistic", test_function="dev"),
    "E4": dict(loss="huber:1", model="robust", noise="student_t:2", test_function="abs", n_grid=(800,)),
    "E5": dict(loss="square", model="linear", noise="gaussian:1"),
}

# keeps the Monte Carlo stream apart from the data stream of the same replicate
MC_SEED_OFFSET = 0x5EED << 32


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: the n grid, the data model, the estimator and the replicate count.

    lam=None selects 0.1 sqrt(n log p) at every n.
    """

    experiment_id: str
    n_grid: Tuple[int, ...] = (400, 800, 1600)
    aspect: float = 0.5
    delta: float = 0.25
    replicates: int = 10
    seed: int = 2024
    model: str = "linear"
    covariance: str = "identity"
    noise: str = "gaussian:1"
    link: str = "logistic"
    loss: str = "square"
    penalty: str = "enet"
    nu: float = 0.5
    lam: Optional[float] = None
    group_size: int = 5
    sparsity: float = 0.1
    amplitude: Optional[float] = None
    test_function: str = "sq"
    n_mc: int = 20000
    tol: float = 1e-9
    max_failure_rate: float = 0.1
    output_dir: str = "out"

    def __post_init__(self):
        if self.experiment_id not in EXPERIMENT_IDS:
            raise InvalidSpec(f"unknown experiment {self.experiment_id!r}; expected one of {EXPERIMENT_IDS}")
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or min(grid) < 1:
            raise InvalidSpec("n_grid must hold positive sample sizes")
        object.__setattr__(self, "n_grid", grid)
        if self.replicates < 1:
            raise InvalidSpec("replicates must be >= 1")
        if not 0 < self.delta <= 1:
            raise InvalidSpec("delta must lie in (0, 1]")
        for n in grid:
            ratio = self.p_for(n) / n
            if not self.delta <= ratio <= 1.0 / self.delta:
                raise InvalidSpec(f"p/n = {ratio:.4g} at n={n} is outside [{self.delta}, {1.0 / self.delta:.4g}]")
        if self.model not in GENERATED_KINDS:
            raise InvalidSpec(f"unknown model {self.model!r}")
        if self.penalty not in PENALTY_FAMILIES:
            raise InvalidSpec(f"unknown penalty family {self.penalty!r}")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise InvalidSpec("nu must be > 0")
        if self.lam is not None and not self.lam >= 0:
            raise InvalidSpec("lam must be >= 0")
        if not 0 <= self.sparsity <= 1:
            raise InvalidSpec("sparsity must lie in [0, 1]")
        if self.n_mc < 100:
            raise InvalidSpec("n_mc must be >= 100")
        loss = parse_loss(self.loss)
        parse_test_function(self.test_function)
        parse_covariance(self.covariance)
        parse_noise(self.noise)
        if self.experiment_id in ("E1", "E5") and loss.family != "square":
            raise InvalidSpec(f"{self.experiment_id} needs the square loss")

    @classmethod
    def defaults(cls, experiment_id: str, **overrides) -> "ExperimentConfig":
        if experiment_id not in _DEFAULTS:
            raise InvalidSpec(f"unknown experiment {experiment_id!r}; expected one of {EXPERIMENT_IDS}")
        values = dict(_DEFAULTS[experiment_id])
        values.update({k: v for k, v in overrides.items() if v is not None})
        values["experiment_id"] = experiment_id
        return cls(**values)

    @classmethod
    def from_json(cls, path: str, **overrides) -> "ExperimentConfig":
        """Load a config file; keys mirror the dataclass fields, overrides win."""
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise InvalidSpec(f"{path}: expected a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(f"{path}: unknown keys {unknown}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        experiment_id = data.pop("experiment_id", None)
        if experiment_id is None:
            raise InvalidSpec(f"{path}: experiment_id is required")
        return cls.defaults(experiment_id, **data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["n_grid"] = list(self.n_grid)
        return out

    def p_for(self, n: int) -> int:
        return max(1, int(round(self.aspect * n)))

    def lam_for(self, n: int, p: int) -> float:
        if self.lam is not None:
            return float(self.lam)
        return 0.1 * math.sqrt(n * math.log(p)) if p > 1 else 0.0

    def model_spec(self, n: int, seed: int) -> ModelSpec:
        p = self.p_for(n)
        k = min(p, max(1, int(round(self.sparsity * p))))
        amplitude = self.amplitude if self.amplitude is not None else 1.0 / math.sqrt(k)
        return ModelSpec(
            kind=self.model,
            n=n,
            p=p,
            seed=seed,
            truth=sparse_coefficients(p, k, amplitude, seed),
            covariance=parse_covariance(self.covariance),
            noise=parse_noise(self.noise),
            link=self.link,
        )

    def penalty_for(self, n: int, p: int, sigma=None) -> PenaltySpec:
        lam = self.lam_for(n, p)
        if self.penalty == "ridge":
            return PenaltySpec.ridge(self.nu, n, sigma)
        if self.penalty == "enet":
            return PenaltySpec.elastic_net(lam, self.nu, n, sigma)
        groups = contiguous_groups(p, self.group_size)
        return PenaltySpec.group_lasso(groups, [lam] * len(groups), self.nu, n, sigma)


def result_fields(experiment_id: str) -> Tuple[str, ...]:
    return BASE_FIELDS + METRIC_FIELDS[experiment_id]


def _safe_df_ratio(dataset, result, a) -> Optional[float]:
    try:
        return df_ratio(dataset, result, a)
    except DegenerateDenominator as exc:
        logger.warning("df ratio recorded as null: %s", exc)
        return None


def _measure_hat(ctx) -> dict:
    hat = hat_matrix(ctx["dataset"], ctx["loss"], ctx["penalty"], ctx["fit"], ctx["a"])
    n = ctx["dataset"].n
    mu = effective_mu(ctx["penalty"], ctx["dataset"].sigma)
    deviation, scale = hat_weight_deviation(ctx["dataset"], hat, mu)
    return {
        "hat_diag_dev": hat_diagonal_deviation(hat),
        "rate": math.sqrt(math.log(n) / n),
        "hat_weight_dev": deviation,
        "hat_weight_scale": scale,
    }


def _measure_weights(ctx) -> dict:
    dataset, result, a = ctx["dataset"], ctx["fit"], ctx["a"]
    _, rem_sumsq, discrepancy = rem_diagnostics(dataset, result, a, dataset.sigma)
    return {
        "discrepancy_sq": discrepancy,
        "weight_mf": mf_weight(a, dataset.sigma),
        "weight_df_ratio": _safe_df_ratio(dataset, result, a),
        "rem_sumsq": rem_sumsq,
    }


def _measure_estimators(ctx) -> dict:
    dataset, result, a, g = ctx["dataset"], ctx["fit"], ctx["a"], ctx["g"]
    alo, _ = alo_estimate(dataset, result, a, g)
    loo, _ = loo_estimate(dataset, ctx["loss"], ctx["penalty"], ctx["solver"], g, warm=result, workers=1)
    trace = mf_weight(a, dataset.sigma)
    mf_trace = mf_estimate(dataset, result, g, trace)
    df = _safe_df_ratio(dataset, result, a)
    mf_df = mf_estimate(dataset, result, g, df) if df is not None else None
    err, se = generalization_error_mc(result.b_hat, ctx["spec"], g, ctx["config"].n_mc, ctx["seed"] ^ MC_SEED_OFFSET)
    z_mean, z_var = corrected_prediction_moments(dataset, result, trace)
    return {
        "alo": alo,
        "loo": loo,
        "mf_trace": mf_trace,
        "mf_df_ratio": mf_df,
        "err_mc": err,
        "err_mc_se": se,
        "abs_alo_loo": abs(alo - loo),
        "abs_mf_trace_loo": abs(mf_trace - loo),
        "abs_mf_df_ratio_loo": abs(mf_df - loo) if mf_df is not None else None,
        "abs_alo_mc": abs(alo - err),
        "z_mean": z_mean,
        "z_var": z_var,
    }


def _measure_hat_ratio(ctx) -> dict:
    dataset = ctx["dataset"]
    trace = mf_weight(ctx["a"], dataset.sigma)
    ratio = hat_ratio(dataset, ctx["loss"], ctx["a"])
    return {
        "weight_mf": trace,
        "weight_hat_ratio": ratio,
        "scaled_gap": abs(trace - ratio) * math.sqrt(dataset.n),
    }


_MEASURES = {
    "E1": _measure_hat,
    "E2": _measure_weights,
    "E3": _measure_weights,
    "E4": _measure_estimators,
    "E5": _measure_hat_ratio,
}


def run_replicate(config: ExperimentConfig, n: int, replicate: int) -> dict:
    """Generate, fit and measure one (n, replicate) cell; failures become a row with a reason."""
    seed = replicate_seed(config.seed, replicate)
    p = config.p_for(n)
    row = {"seed": seed, "n": n, "p": p, "replicate": replicate, "status": "ok", "reason": ""}
    try:
        spec = config.model_spec(n, seed)
        dataset = generate(spec)
        loss = parse_loss(config.loss)
        penalty = config.penalty_for(n, p, dataset.sigma)
        solver_cfg = SolverConfig(tol=config.tol)
        result = fit(dataset, loss, penalty, solver_cfg)
        a = a_hat(dataset, penalty, result)
        checks = check_all(dataset, loss, penalty, result, a)
        row.update(
            kkt_residual=result.kkt_residual,
            iterations=result.iterations,
            support_size=int(a.support.size),
            bound_violations=sum(not c.ok for c in checks),
        )
        ctx = dict(
            config=config, spec=spec, dataset=dataset, loss=loss, penalty=penalty, fit=result, a=a,
            g=parse_test_function(config.test_function), solver=solver_cfg, seed=seed,
        )
        row.update(_MEASURES[config.experiment_id](ctx))
    except AloError as exc:
        logger.error("%s n=%d replicate=%d failed: %s", config.experiment_id, n, replicate, exc)
        row["status"] = "failed"
        row["reason"] = f"{type(exc).__name__}: {exc}"
    return row


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, numbers.Integral):
        return str(int(value))
    return format(float(value), ".17g")


def write_rows(path: str, rows: List[dict], fields) -> None:
    """Rows in the given order, floats with 17 significant digits."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields), restval="", extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(v) for k, v in row.items()})


def acceptance_checks(experiment_id: str, per_n: Dict[int, Dict[str, Optional[float]]]) -> Dict[str, Optional[bool]]:
    """Scaling and agreement checks on the per-n medians; None when a median is missing."""
    ns = sorted(per_n)
    checks: Dict[str, Optional[bool]] = {}

    def ratio(metric):
        if len(ns) < 2:
            return None
        return scaling_ratio({n: per_n[n].get(metric) for n in ns}, ns[-1], ns[0])

    def at_most(lhs, rhs):
        return None if lhs is None or rhs is None else bool(lhs <= rhs)

    if experiment_id == "E1":
        r = ratio("hat_diag_dev")
        if r is not None:
            checks["hat_diag_dev_ratio_le_0.6"] = r <= 0.6
        checks["hat_diag_dev_le_8_rate"] = all(
            at_most(per_n[n]["hat_diag_dev"], None if per_n[n]["rate"] is None else 8.0 * per_n[n]["rate"])
            for n in ns
        )
    elif experiment_id in ("E2", "E3"):
        r = ratio("discrepancy_sq")
        if r is not None:
            checks["discrepancy_sq_ratio_le_0.45"] = r <= 0.45
    elif experiment_id == "E4":
        for n in ns:
            m = per_n[n]
            se = m.get("err_mc_se")
            checks[f"n={n}:alo_loo_le_3se"] = at_most(m.get("abs_alo_loo"), None if se is None else 3.0 * se)
            checks[f"n={n}:mf_df_ratio_loo_le_3se"] = at_most(m.get("abs_mf_df_ratio_loo"), None if se is None else 3.0 * se)
            checks[f"n={n}:alo_mc_le_5se"] = at_most(m.get("abs_alo_mc"), None if se is None else 5.0 * se)
    else:
        r = ratio("scaled_gap")
        if r is not None:
            checks["scaled_gap_ratio_in_0.3_3"] = 0.3 <= r <= 3.0
    return checks


def summarize(config: ExperimentConfig, rows: List[dict]) -> dict:
    """Per-n medians, log-log slopes, extreme-n ratios and acceptance checks."""
    metrics = METRIC_FIELDS[config.experiment_id]
    per_n = summarize_rows(rows, metrics)
    ns = sorted(per_n)
    failures = sum(r["status"] != "ok" for r in rows)
    return {
        "experiment": config.experiment_id,
        "config": config.to_dict(),
        "rows": len(rows),
        "failures": failures,
        "bound_violations": sum(int(r.get("bound_violations") or 0) for r in rows),
        "per_n": {str(n): per_n[n] for n in ns},
        "slopes": {m: loglog_slope(ns, [per_n[n][m] for n in ns]) for m in metrics},
        "ratios": {
            m: (scaling_ratio({n: per_n[n][m] for n in ns}, ns[-1], ns[0]) if len(ns) > 1 else None)
            for m in metrics
        },
        "acceptance": acceptance_checks(config.experiment_id, per_n),
    }


def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None, workers: Optional[int] = None) -> dict:
    """Run every (n, replicate) cell and write results.csv, summary.json and bench.json.

    Raises ExperimentFailed, after the files are written, when more than
    config.max_failure_rate of the replicates failed.
    """
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    workers = workers or worker_count()
    tasks = [(n, r) for n in config.n_grid for r in range(config.replicates)]
    logger.info("experiment %s: %d replicates on %d workers", config.experiment_id, len(tasks), workers)

    def timed(task):
        t0 = time.perf_counter()
        row = run_replicate(config, *task)
        elapsed = time.perf_counter() - t0
        logger.info("%s n=%d replicate=%d %s in %.2fs", config.experiment_id, task[0], task[1], row["status"], elapsed)
        return row, elapsed

    bench = Benchmark()
    bench.start()
    if workers == 1:
        outcomes = [timed(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(timed, tasks))
    bench.stop()

    rows = [row for row, _ in outcomes]
    for _, elapsed in outcomes:
        bench.record(elapsed)
    write_rows(os.path.join(out_dir, "results.csv"), rows, result_fields(config.experiment_id))
    summary = summarize(config, rows)
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    bench.save(os.path.join(out_dir, "bench.json"), config.experiment_id, workers)

    if summary["failures"] > config.max_failure_rate * len(rows):
        raise ExperimentFailed(
            f"{summary['failures']} of {len(rows)} replicates failed in {config.experiment_id}", summary
        )
    return summary
