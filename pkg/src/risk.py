"""Risk estimators (ALO, exact LOO, mean-field, Monte Carlo) and weight diagnostics."""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from src.curvature import AHat, HatMatrix, leverages, newton_loo_predictions
from src.errors import AloError, DegenerateDenominator, InvalidSpec, LeaveOneOutFailure, WrongLoss
from src.gen import ModelSpec, draw_observations
from src.model import Dataset, FitResult, LossSpec, PenaltySpec, TestFunction
from src.solver import SolverConfig, fit as solve_full, fit_leave_one_out

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-12


def worker_count(default: int = 1) -> int:
    """Thread count from ALOCV_THREADS (>= 1)."""
    raw = os.environ.get("ALOCV_THREADS", "")
    try:
        return max(1, int(raw)) if raw else default
    except ValueError:
        logger.warning("ignoring non-integer ALOCV_THREADS=%r", raw)
        return default


@dataclass(eq=False)
class RiskReport:
    """Every available estimate of the generalization error and the weights behind them."""

    n: int
    p: int
    test_function: str
    alo: float
    weights_alo: np.ndarray
    leverages: np.ndarray
    denominators: np.ndarray
    loo: Optional[float] = None
    mf: Dict[str, float] = field(default_factory=dict)
    weight_mf: Optional[float] = None
    weight_df_ratio: Optional[float] = None
    weight_hat_ratio: Optional[float] = None
    discrepancy_sq: Optional[float] = None
    rem: Optional[np.ndarray] = None
    rem_sumsq: Optional[float] = None

    @property
    def sigma_known(self) -> bool:
        return self.weight_mf is not None

    def to_dict(self) -> dict:
        def opt(v):
            return None if v is None else float(v)

        return {
            "n": self.n,
            "p": self.p,
            "test_function": self.test_function,
            "alo": float(self.alo),
            "loo": opt(self.loo),
            "mf": {k: float(v) for k, v in self.mf.items()},
            "weight_mf": opt(self.weight_mf),
            "weight_df_ratio": opt(self.weight_df_ratio),
            "weight_hat_ratio": opt(self.weight_hat_ratio),
            "discrepancy_sq": opt(self.discrepancy_sq),
            "rem_sumsq": opt(self.rem_sumsq),
            "rem": None if self.rem is None else [float(v) for v in self.rem],
            "weights_alo": [float(v) for v in self.weights_alo],
        }


def alo_estimate(dataset: Dataset, fit: FitResult, a: AHat, g: TestFunction) -> Tuple[float, np.ndarray]:
    """(1/n) sum_i g(Newton proxy of x_i^T b^i, y_i) and the weights W_i."""
    predictions, weights, _, _ = newton_loo_predictions(dataset, fit, a)
    return float(np.mean(g(predictions, dataset.y))), weights


def loo_estimate(
    dataset: Dataset,
    loss: LossSpec,
    penalty: PenaltySpec,
    cfg: Optional[SolverConfig],
    g: TestFunction,
    warm: Optional[FitResult] = None,
    workers: Optional[int] = None,
) -> Tuple[float, np.ndarray]:
    """Exact leave-one-out: n refits, returns (1/n) sum_i g(x_i^T b^i, y_i) and x_i^T b^i."""
    cfg = cfg or SolverConfig()
    warm = warm if warm is not None else solve_full(dataset, loss, penalty, cfg)
    workers = workers or worker_count()

    def one(i: int) -> float:
        try:
            refit = fit_leave_one_out(dataset, loss, penalty, i, warm, cfg)
        except AloError as exc:
            raise LeaveOneOutFailure(i, exc) from exc
        return float(dataset.x[i] @ refit.b_hat)

    if workers == 1:
        predictions = np.array([one(i) for i in range(dataset.n)])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = np.array(list(pool.map(one, range(dataset.n))))
    return float(np.mean(g(predictions, dataset.y))), predictions


def mf_weight(a: AHat, sigma: np.ndarray) -> float:
    """tr[Sigma A]."""
    if not a.support.size:
        return 0.0
    s = a.support
    return float(np.sum(np.asarray(sigma)[np.ix_(s, s)] * a.block))


def df_ratio(dataset: Dataset, fit: FitResult, a: AHat) -> float:
    """tr[X A X^T D] / tr[D - D X A X^T D]."""
    lev = leverages(dataset, a)
    d = fit.curvature_diag
    denominator = float(np.sum((1.0 - lev * d) * d))
    if denominator <= DENOMINATOR_FLOOR:
        raise DegenerateDenominator(f"tr[D - DXAX^TD] = {denominator:.3e}", denominator)
    return float(np.sum(lev * d)) / denominator


def hat_ratio(dataset: Dataset, loss: LossSpec, a: AHat) -> float:
    """tr[H] / (n - tr[H]) for the square loss."""
    if loss.family != "square":
        raise WrongLoss("tr[H]/(n - tr[H]) needs the square loss")
    trace = float(np.sum(leverages(dataset, a)))
    denominator = dataset.n - trace
    if denominator <= DENOMINATOR_FLOOR:
        raise DegenerateDenominator(f"n - tr[H] = {denominator:.3e}", denominator)
    return trace / denominator


def mf_estimate(dataset: Dataset, fit: FitResult, g: TestFunction, weight: float) -> float:
    """(1/n) sum_i g(x_i^T b + weight L'(x_i^T b), y_i)."""
    if not (math.isfinite(weight) and weight >= 0):
        raise InvalidSpec(f"mean-field weight must be finite and >= 0, got {weight}")
    return float(np.mean(g(fit.predictions + weight * fit.d1, dataset.y)))


def rem_diagnostics(dataset: Dataset, fit: FitResult, a: AHat, sigma: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Rem_i = x_i^T A x_i - tr[A Sigma](1 - D_ii x_i^T A x_i), sum Rem_i^2, and (1/n) sum (W_i - tr[A Sigma])^2."""
    lev = leverages(dataset, a)
    trace = mf_weight(a, sigma)
    denom = 1.0 - fit.curvature_diag * lev
    rem = lev - trace * denom
    discrepancy = float(np.mean((lev / denom - trace) ** 2))
    return rem, float(rem @ rem), discrepancy


def generalization_error_mc(b: np.ndarray, model: ModelSpec, g: TestFunction, n_mc: int, seed: int) -> Tuple[float, float]:
    """Monte Carlo mean of g(b^T x_new, y_new) over fresh draws from `model`, with its standard error."""
    if n_mc < 100:
        raise InvalidSpec("n_mc must be >= 100")
    rng = np.random.default_rng(seed)
    x_new, y_new = draw_observations(model, n_mc, rng)
    values = g(x_new @ np.asarray(b, dtype=float), y_new)
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(n_mc))


def concentration_constants(p: int, n: int, mu: float, delta: float, h_inv_opnorm: float) -> Tuple[float, float]:
    """Lipschitz constants (K, K') of X -> F(X)(1 - f(X)) and of the leverage map.

    n, mu and delta only enter the comparison in `constants_within_theorem`.
    """
    if min(p, n, mu, delta) <= 0 or h_inv_opnorm < 0:
        raise InvalidSpec("p, n, mu, delta must be > 0")
    h = float(h_inv_opnorm)
    k = 4.0 * p * h ** 1.5 + 2.0 * math.sqrt(p) * h ** 1.5
    k_prime = h * math.sqrt(p) * max(1.0, math.sqrt(h) * math.sqrt(p))
    return k, k_prime


def theorem_constants(n: int, mu: float, delta: float) -> Tuple[float, float]:
    """Closed-form upper bounds on (K, K') valid when ||H^{-1}|| = 1/(n mu) and p/n in [delta, 1/delta]."""
    k = 4.0 / (delta * mu ** 1.5 * math.sqrt(n)) + 2.0 / (math.sqrt(delta) * mu ** 1.5 * n)
    k_prime = delta ** -0.5 / (mu * math.sqrt(n)) * max(1.0, delta ** -0.5 / math.sqrt(mu))
    return k, k_prime


def constants_within_theorem(p: int, n: int, mu: float, delta: float) -> bool:
    """Check (K, K') at h = 1/(n mu) against `theorem_constants`."""
    if not delta <= p / n <= 1.0 / delta:
        return False
    k, k_prime = concentration_constants(p, n, mu, delta, 1.0 / (n * mu))
    k_bound, k_prime_bound = theorem_constants(n, mu, delta)
    slack = 1.0 + 1e-12
    return k <= k_bound * slack and k_prime <= k_prime_bound * slack


def hat_diagonal_deviation(hat: HatMatrix) -> float:
    """max_i |H_ii - tr[H]/n|."""
    diag = np.diag(hat.matrix)
    return float(np.max(np.abs(diag - hat.trace / diag.size)))


def hat_weight_deviation(dataset: Dataset, hat: HatMatrix, mu: float) -> Tuple[float, float]:
    """max_i |H_ii/(1-H_ii) - tr[H]/(n-tr[H])| and its predicted scale sqrt(log n/n)(1 + ||X||^2/(n mu))^2."""
    n = dataset.n
    diag = np.diag(hat.matrix)
    deviation = float(np.max(np.abs(diag / (1.0 - diag) - hat.trace / (n - hat.trace))))
    op = float(np.linalg.norm(dataset.x, 2))
    scale = math.sqrt(math.log(max(n, 2)) / n) * (1.0 + op ** 2 / (n * mu)) ** 2
    return deviation, scale


def corrected_prediction_moments(dataset: Dataset, fit: FitResult, weight: float) -> Tuple[float, float]:
    """Mean and variance of (x_i^T b + w L'_i) / ||Sigma^{1/2} b|| (Sigma = I when unknown)."""
    sigma = dataset.sigma if dataset.sigma is not None else np.eye(dataset.p)
    norm = math.sqrt(max(float(fit.b_hat @ sigma @ fit.b_hat), 0.0))
    if norm == 0.0:
        return 0.0, 0.0
    z = (fit.predictions + weight * fit.d1) / norm
    return float(np.mean(z)), float(np.var(z))


def risk_report(
    dataset: Dataset,
    loss: LossSpec,
    fit: FitResult,
    a: AHat,
    g: TestFunction,
    sigma: Optional[np.ndarray] = None,
    loo: Optional[float] = None,
) -> RiskReport:
    """Collect ALO, optional LOO and every mean-field variant whose weight is available."""
    predictions, weights, lev, denom = newton_loo_predictions(dataset, fit, a)
    report = RiskReport(
        n=dataset.n,
        p=dataset.p,
        test_function=g.label(),
        alo=float(np.mean(g(predictions, dataset.y))),
        weights_alo=weights,
        leverages=lev,
        denominators=denom,
        loo=loo,
    )
    try:
        report.weight_df_ratio = df_ratio(dataset, fit, a)
        report.mf["df_ratio"] = mf_estimate(dataset, fit, g, report.weight_df_ratio)
    except DegenerateDenominator as exc:
        logger.warning("df ratio unavailable: %s", exc)
    if loss.family == "square":
        report.weight_hat_ratio = hat_ratio(dataset, loss, a)
        report.mf["hat_ratio"] = mf_estimate(dataset, fit, g, report.weight_hat_ratio)
    if sigma is not None:
        report.weight_mf = mf_weight(a, sigma)
        report.mf["trace"] = mf_estimate(dataset, fit, g, report.weight_mf)
        report.rem, report.rem_sumsq, report.discrepancy_sq = rem_diagnostics(dataset, fit, a, sigma)
    else:
        logger.info("Sigma unknown: tr[Sigma A] and Rem diagnostics not reported")
    return report
