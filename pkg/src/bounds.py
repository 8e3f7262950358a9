"""Deterministic inequalities every certified fit must satisfy."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy.linalg import cholesky

from src.curvature import AHat, hat_matrix, leverages
from src.model import Dataset, FitResult, LossSpec, PenaltySpec

logger = logging.getLogger(__name__)

ABS_SLACK = 1e-8
SPECTRAL_SLACK = 1e-9


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    ok: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "ok": self.ok}


def _check(name: str, lhs: float, rhs: float) -> BoundCheck:
    ok = bool(lhs <= rhs)
    if not ok:
        logger.warning("bound %s violated: %.6g > %.6g", name, lhs, rhs)
    return BoundCheck(name, float(lhs), float(rhs), ok)


def effective_mu(penalty: PenaltySpec, sigma: Optional[np.ndarray]) -> float:
    """Strong-convexity constant relative to Sigma (nu/||Sigma||, or nu when Sigma is unknown)."""
    if sigma is None:
        return penalty.nu
    return penalty.nu / float(np.linalg.norm(sigma, 2))


def _sigma_norm(sigma: Optional[np.ndarray], v: np.ndarray) -> float:
    if sigma is None:
        return float(np.linalg.norm(v))
    return math.sqrt(max(float(v @ sigma @ v), 0.0))


def loo_proximity(dataset: Dataset, penalty: PenaltySpec, full: FitResult, loo: FitResult, i: int) -> BoundCheck:
    """n mu ||Sigma^{1/2}(b - b^i)||^2 <= ||x_i|| |L'_i| ||b - b^i||, up to the KKT slack of both solves."""
    sigma = dataset.sigma
    mu = effective_mu(penalty, sigma)
    delta = full.b_hat - loo.b_hat
    dist = float(np.linalg.norm(delta))
    lhs = penalty.n_scale * mu * _sigma_norm(sigma, delta) ** 2
    rhs = float(np.linalg.norm(dataset.x[i])) * abs(float(full.d1[i])) * dist
    slack = dist * (full.kkt_absolute + loo.kkt_absolute) + 10.0 * full.tol * max(1.0, rhs)
    return _check(f"loo_proximity[{i}]", lhs, rhs + slack)


def b_hat_norm(dataset: Dataset, loss: LossSpec, penalty: PenaltySpec, fit: FitResult) -> Optional[BoundCheck]:
    """n mu ||Sigma^{1/2} b|| <= ||X Sigma^{-1/2}|| sqrt(n) max_l |L'_l|; None unless the loss is 1-Lipschitz."""
    if not loss.lipschitz_flags[0]:
        return None
    sigma = dataset.sigma
    mu = effective_mu(penalty, sigma)
    weighted = _sigma_norm(sigma, fit.b_hat)
    if sigma is None:
        x_white = dataset.x
    else:
        # X Sigma^{-1/2} has the singular values of X L^{-T} for Sigma = L L^T
        factor = cholesky(sigma, lower=True)
        x_white = np.linalg.solve(factor, dataset.x.T).T
    lhs = penalty.n_scale * mu * weighted
    rhs = float(np.linalg.norm(x_white, 2)) * math.sqrt(dataset.n) * float(np.max(np.abs(fit.d1)))
    ratio = float(np.linalg.norm(fit.b_hat)) / weighted if weighted > 0 else 0.0
    slack = fit.kkt_absolute * ratio + 10.0 * fit.tol * max(1.0, rhs)
    return _check("b_hat_norm", lhs, rhs + slack)


def a_hat_scaled(dataset: Dataset, penalty: PenaltySpec, a: AHat) -> Optional[BoundCheck]:
    """||Sigma^{1/2} A Sigma^{1/2}|| <= 1/(n mu); needs Sigma."""
    sigma = dataset.sigma
    if sigma is None:
        return None
    factor = cholesky(sigma, lower=True)
    scaled = factor.T @ a.matrix @ factor
    lhs = float(np.linalg.norm(0.5 * (scaled + scaled.T), 2))
    return _check("a_hat_scaled", lhs, 1.0 / (penalty.n_scale * effective_mu(penalty, sigma)) + ABS_SLACK)


def leverage_bound(dataset: Dataset, penalty: PenaltySpec, fit: FitResult, a: AHat) -> Optional[BoundCheck]:
    """(1 - D_ii x_i^T A x_i)^{-1} <= 1 + D_ii x_i^T Sigma^{-1} x_i / (n mu) for every i; reports the tightest i."""
    sigma = dataset.sigma
    if sigma is None:
        return None
    d = fit.curvature_diag
    inv = 1.0 / (1.0 - d * leverages(dataset, a))
    factor = cholesky(sigma, lower=True)
    whitened = np.linalg.solve(factor, dataset.x.T)
    quad = np.sum(whitened ** 2, axis=0)
    bound = 1.0 + d * quad / (penalty.n_scale * effective_mu(penalty, sigma))
    worst = int(np.argmax(inv - bound))
    return _check("leverage_bound", inv[worst], bound[worst] + ABS_SLACK)


def operator_norms(dataset: Dataset, fit: FitResult, a: AHat) -> List[BoundCheck]:
    """Norm bounds implied by A = (X_S^T D X_S + H_pen)^{-1} on the support."""
    if not a.support.size:
        return []
    h_inv = a.h_pen_inv_opnorm
    scaled_x = np.sqrt(fit.curvature_diag)[:, None] * dataset.x[:, a.support]
    a_norm = float(np.linalg.norm(a.block, 2))
    sandwich = float(np.linalg.norm(scaled_x @ a.block @ scaled_x.T, 2))
    half = float(np.linalg.norm(scaled_x @ a.block, 2))
    return [
        _check("a_hat_opnorm", a_norm, h_inv * (1.0 + SPECTRAL_SLACK)),
        _check("d_x_a_x_d_opnorm", sandwich, 1.0 + SPECTRAL_SLACK),
        _check("d_x_a_opnorm", half, math.sqrt(h_inv) * (1.0 + SPECTRAL_SLACK)),
        _check("d_x_a_sqrt_opnorm", math.sqrt(max(sandwich, 0.0)), 1.0 + SPECTRAL_SLACK),
    ]


def hat_spectrum(dataset: Dataset, loss: LossSpec, penalty: PenaltySpec, fit: FitResult, a: AHat) -> List[BoundCheck]:
    """Eigenvalues of H = X A X^T lie in [0, 1] (square loss only)."""
    if loss.family != "square":
        return []
    eig = hat_matrix(dataset, loss, penalty, fit, a).eigenvalues()
    return [
        _check("hat_eigen_min", -float(eig[0]), SPECTRAL_SLACK),
        _check("hat_eigen_max", float(eig[-1]), 1.0 + SPECTRAL_SLACK),
    ]


def check_all(
    dataset: Dataset,
    loss: LossSpec,
    penalty: PenaltySpec,
    fit: FitResult,
    a: AHat,
    loo_fits: Optional[Dict[int, FitResult]] = None,
) -> List[BoundCheck]:
    """Every applicable deterministic check for one certified fit."""
    checks: List[Optional[BoundCheck]] = [
        b_hat_norm(dataset, loss, penalty, fit),
        a_hat_scaled(dataset, penalty, a),
        leverage_bound(dataset, penalty, fit, a),
    ]
    checks.extend(operator_norms(dataset, fit, a))
    checks.extend(hat_spectrum(dataset, loss, penalty, fit, a))
    for i, loo in sorted((loo_fits or {}).items()):
        checks.append(loo_proximity(dataset, penalty, fit, loo, i))
    return [c for c in checks if c is not None]


def render_table(checks: List[BoundCheck]) -> str:
    """Markdown table of the checks."""
    lines = [
        "# Deterministic bound checks",
        "",
        "| Check | LHS | RHS | OK |",
        "| --- | --- | --- | --- |",
    ]
    for c in checks:
        lines.append(f"| {c.name} | {c.lhs:.6g} | {c.rhs:.6g} | {'yes' if c.ok else 'NO'} |")
    lines.append("")
    return "\n".join(lines)
