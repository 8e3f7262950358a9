"""Curvature matrix A, hat matrix H and the one-step Newton leave-one-out proxy."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.errors import DegenerateLeverage, SingularSystem, WrongLoss
from src.model import Dataset, FitResult, LossSpec, PenaltySpec

logger = logging.getLogger(__name__)

LEVERAGE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class AHat:
    """Dense p x p curvature matrix, zero outside support x support.

    block is the support x support inverse and penalty_hessian the penalty
    curvature H_pen on the same support.
    """

    matrix: np.ndarray
    support: np.ndarray
    penalty_kind: str
    block: np.ndarray
    penalty_hessian: np.ndarray

    @property
    def h_pen_inv_opnorm(self) -> float:
        """||H_pen^{-1}||_op (0 on an empty support)."""
        if not self.support.size:
            return 0.0
        return 1.0 / float(np.linalg.eigvalsh(self.penalty_hessian)[0])


@dataclass(frozen=True, eq=False)
class HatMatrix:
    matrix: np.ndarray
    trace: float

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))


def penalty_hessian(penalty: PenaltySpec, fit: FitResult) -> np.ndarray:
    """Penalty curvature restricted to the active set.

    n nu I for ridge/enet; group lasso adds lam_k/||b_G|| (I - b_G b_G^T/||b_G||^2)
    on every active group.
    """
    support = fit.active_set if penalty.family != "ridge" else np.arange(fit.b_hat.size)
    h = penalty.n_nu * np.eye(support.size)
    if penalty.family == "group":
        position = {int(j): k for k, j in enumerate(support)}
        for k in fit.active_groups:
            g = penalty.groups[k]
            bg = fit.b_hat[g]
            norm = float(np.linalg.norm(bg))
            idx = np.array([position[int(j)] for j in g])
            angular = np.eye(g.size) - np.outer(bg, bg) / norm ** 2
            h[np.ix_(idx, idx)] += penalty.weights[k] / norm * angular
    return h


def a_hat(dataset: Dataset, penalty: PenaltySpec, fit: FitResult) -> AHat:
    """Inverse effective Hessian, restricted to the active set for enet / group lasso."""
    p = dataset.p
    support = np.arange(p) if penalty.family == "ridge" else np.asarray(fit.active_set, dtype=int)
    h_pen = penalty_hessian(penalty, fit)
    matrix = np.zeros((p, p))
    if not support.size:
        return AHat(matrix, support, penalty.family, np.zeros((0, 0)), h_pen)
    xs = dataset.x[:, support]
    system = xs.T @ (fit.curvature_diag[:, None] * xs) + h_pen
    try:
        factor = cho_factor(system, lower=True)
    except LinAlgError as exc:
        raise SingularSystem(f"restricted curvature system of size {support.size} is singular") from exc
    block = cho_solve(factor, np.eye(support.size))
    block = 0.5 * (block + block.T)
    matrix[np.ix_(support, support)] = block
    return AHat(matrix, support, penalty.family, block, h_pen)


def leverages(dataset: Dataset, a: AHat) -> np.ndarray:
    """x_i^T A x_i for every row."""
    if not a.support.size:
        return np.zeros(dataset.n)
    xs = dataset.x[:, a.support]
    return np.einsum("ij,jk,ik->i", xs, a.block, xs)


def hat_matrix(dataset: Dataset, loss: LossSpec, penalty: PenaltySpec, fit: FitResult,
               a: Optional[AHat] = None) -> HatMatrix:
    """H = X A X^T for the square loss."""
    if loss.family != "square":
        raise WrongLoss("the hat matrix is defined for the square loss only")
    a = a if a is not None else a_hat(dataset, penalty, fit)
    if not a.support.size:
        return HatMatrix(np.zeros((dataset.n, dataset.n)), 0.0)
    xs = dataset.x[:, a.support]
    h = xs @ a.block @ xs.T
    h = 0.5 * (h + h.T)
    return HatMatrix(h, float(np.trace(h)))


def newton_loo_predictions(dataset: Dataset, fit: FitResult, a: AHat) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized Newton proxies for x_i^T b^i.

    Returns (predictions, weights W_i, leverages x_i^T A x_i, denominators).
    """
    lev = leverages(dataset, a)
    denom = 1.0 - lev * fit.curvature_diag
    bad = np.flatnonzero(denom <= LEVERAGE_FLOOR)
    if bad.size:
        i = int(bad[0])
        raise DegenerateLeverage(f"1 - D_ii x_i^T A x_i = {denom[i]:.3e} at i={i}", i, float(denom[i]))
    weights = lev / denom
    return fit.predictions + fit.d1 * weights, weights, lev, denom


def newton_loo_prediction(dataset: Dataset, fit: FitResult, a: AHat, i: int) -> float:
    """x_i^T b + L'(x_i^T b) x_i^T A x_i / (1 - x_i^T A x_i D_ii)."""
    xs = dataset.x[i, a.support]
    lev = float(xs @ a.block @ xs) if a.support.size else 0.0
    denom = 1.0 - lev * float(fit.curvature_diag[i])
    if denom <= LEVERAGE_FLOOR:
        raise DegenerateLeverage(f"1 - D_ii x_i^T A x_i = {denom:.3e} at i={i}", i, denom)
    return float(fit.predictions[i] + fit.d1[i] * lev / denom)


def coefficient_derivative(dataset: Dataset, fit: FitResult, a: AHat, i: int, j: int) -> np.ndarray:
    """d b / d x_ij = A(-e_j L'_i - X^T D e_i b_j)."""
    return -a.matrix[:, j] * fit.d1[i] - a.matrix @ dataset.x[i] * (fit.curvature_diag[i] * fit.b_hat[j])
