"""Accelerated proximal gradient for sum_i L_{y_i}(x_i^T b) + R(b), certified by KKT residual."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.errors import InvalidSpec, MaxIterExceeded, NonFiniteObjective
from src.model import Dataset, FitResult, LossSpec, PenaltySpec, activity_threshold

logger = logging.getLogger(__name__)

MAX_HALVINGS = 60


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and iteration budget for `fit`.

    tol is the target for the normalized KKT residual; acceleration toggles the
    monotone momentum step.
    """

    tol: float = 1e-9
    max_iter: int = 100_000
    acceleration: bool = True
    backtracking: bool = True

    def __post_init__(self):
        if not (self.tol > 0):
            raise InvalidSpec("tol must be > 0")
        if self.max_iter < 1:
            raise InvalidSpec("max_iter must be >= 1")


def soft_threshold(v, threshold):
    """sign(v) * max(|v| - threshold, 0)."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def prox(penalty: PenaltySpec, v: np.ndarray, step: float) -> np.ndarray:
    """argmin_b ||b - v||^2 / (2 step) + R(b), closed form for every family."""
    if not (step > 0):
        raise InvalidSpec("prox step must be > 0")
    v = np.asarray(v, dtype=float)
    shrink = 1.0 / (1.0 + step * penalty.n_nu)
    if penalty.family == "ridge":
        return v * shrink
    if penalty.family == "enet":
        return soft_threshold(v, step * penalty.lam) * shrink
    out = np.zeros_like(v)
    for g, lam_k in zip(penalty.groups, penalty.weights):
        norm = float(np.linalg.norm(v[g]))
        if norm > step * lam_k:
            out[g] = v[g] * ((1.0 - step * lam_k / norm) * shrink)
    return out


def _subgradient_distance(penalty: PenaltySpec, s: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance from s to the subdifferential of R at b."""
    r = s - penalty.n_nu * b
    if penalty.family == "ridge":
        return float(np.linalg.norm(r))
    if penalty.family == "enet":
        zero = b == 0
        gap = np.where(zero, np.maximum(np.abs(r) - penalty.lam, 0.0), r - penalty.lam * np.sign(b))
        return float(np.linalg.norm(gap))
    total = 0.0
    for g, lam_k in zip(penalty.groups, penalty.weights):
        bg = b[g]
        norm = float(np.linalg.norm(bg))
        if norm == 0.0:
            total += max(float(np.linalg.norm(r[g])) - lam_k, 0.0) ** 2
        else:
            total += float(np.sum((r[g] - lam_k * bg / norm) ** 2))
    return math.sqrt(total)


def _check_shapes(dataset: Dataset, penalty: PenaltySpec):
    if penalty.n_scale != dataset.n:
        raise InvalidSpec(f"penalty n_scale={penalty.n_scale} but dataset has n={dataset.n}")
    if penalty.dim is not None and penalty.dim != dataset.p:
        raise InvalidSpec(f"groups cover {penalty.dim} coordinates but p={dataset.p}")


def _kkt(x, y, weights, loss, penalty, b):
    s = -x.T @ (weights * loss.d1(y, x @ b))
    scale = max(1.0, float(np.linalg.norm(s)))
    return _subgradient_distance(penalty, s, b) / scale, scale


def kkt_residual(dataset: Dataset, loss: LossSpec, penalty: PenaltySpec, b: np.ndarray) -> float:
    """dist(-sum_i x_i L'(x_i^T b), dR(b)) / max(1, ||sum_i x_i L'(x_i^T b)||)."""
    b = np.asarray(b, dtype=float)
    return _kkt(dataset.x, dataset.y, np.ones(dataset.n), loss, penalty, b)[0]


def smooth_lipschitz(dataset: Dataset, loss: LossSpec) -> float:
    """||X||_op^2 sup L'' bounds the Lipschitz constant of the smooth gradient."""
    return float(np.linalg.norm(dataset.x, 2)) ** 2 * loss.curvature_bound


def _solve(dataset, loss, penalty, cfg, weights, b0, lipschitz):
    x, y = dataset.x, dataset.y

    def smooth(b):
        return float(weights @ loss.value(y, x @ b))

    def smooth_grad(b):
        t = x @ b
        return float(weights @ loss.value(y, t)), x.T @ (weights * loss.d1(y, t))

    step = 1.0 / (lipschitz + penalty.n_nu)
    b = np.array(b0, dtype=float)
    f_b = smooth(b) + penalty.value(b)
    history = [f_b]
    kkt, scale = _kkt(x, y, weights, loss, penalty, b)
    t = 1.0
    point = b.copy()
    halvings = 0
    iterations = 0

    while kkt > cfg.tol and iterations < cfg.max_iter:
        iterations += 1
        f_point, grad = smooth_grad(point)
        while True:
            z = prox(penalty, point - step * grad, step)
            diff = z - point
            f_z = smooth(z)
            bound = f_point + float(grad @ diff) + float(diff @ diff) / (2.0 * step)
            if not cfg.backtracking or f_z <= bound + 1e-12 * max(1.0, abs(f_point)) or halvings >= MAX_HALVINGS:
                break
            step *= 0.5
            halvings += 1
        obj_z = f_z + penalty.value(z)
        if not math.isfinite(obj_z):
            raise NonFiniteObjective(f"objective became {obj_z} at iteration {iterations}")

        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0 if cfg.acceleration else 1.0
        accept = obj_z <= f_b + 1e-14 * max(1.0, abs(f_b))
        if accept:
            b_next, f_next = z, obj_z
        else:
            b_next, f_next = b, f_b
        if cfg.acceleration and accept:
            point = b_next + (t / t_next) * (z - b_next) + ((t - 1.0) / t_next) * (b_next - b)
        else:
            # restart the momentum from the incumbent
            point = b_next.copy()
            t_next = 1.0
        if b_next is not b:
            kkt, scale = _kkt(x, y, weights, loss, penalty, b_next)
        b, f_b, t = b_next, f_next, t_next
        history.append(f_b)

    logger.debug(
        "solve: %d iterations, kkt=%.3e, step halvings=%d, objective=%.12g",
        iterations, kkt, halvings, f_b,
    )
    return b, f_b, kkt, scale, iterations, np.asarray(history)


def _support(penalty, b):
    thr = activity_threshold(b)
    if penalty.family != "group":
        return np.flatnonzero(np.abs(b) > thr), np.zeros(0, dtype=int)
    groups = np.array([k for k, g in enumerate(penalty.groups) if np.linalg.norm(b[g]) > thr], dtype=int)
    if not groups.size:
        return np.zeros(0, dtype=int), groups
    return np.sort(np.concatenate([penalty.groups[k] for k in groups])), groups


def _finish(dataset, loss, penalty, cfg, solved, lipschitz) -> FitResult:
    b, objective, kkt, scale, iterations, history = solved
    t = dataset.x @ b
    active, groups = _support(penalty, b)
    result = FitResult(
        b_hat=b,
        predictions=t,
        curvature_diag=loss.d2(dataset.y, t),
        d1=loss.d1(dataset.y, t),
        active_set=active,
        active_groups=groups,
        kkt_residual=kkt,
        kkt_scale=scale,
        iterations=iterations,
        objective=objective,
        certified=kkt <= cfg.tol,
        tol=cfg.tol,
        lipschitz=lipschitz,
        objective_history=history,
    )
    if not result.certified:
        logger.warning("solver stopped after %d iterations with kkt=%.3e > tol=%.1e", iterations, kkt, cfg.tol)
        raise MaxIterExceeded(
            f"KKT residual {kkt:.3e} above tol {cfg.tol:.1e} after {iterations} iterations", result
        )
    return result


def fit(
    dataset: Dataset,
    loss: LossSpec,
    penalty: PenaltySpec,
    cfg: Optional[SolverConfig] = None,
    start: Optional[np.ndarray] = None,
) -> FitResult:
    """Minimize sum_i L_{y_i}(x_i^T b) + R(b) to KKT accuracy cfg.tol.

    Raises MaxIterExceeded (carrying the best iterate) when the budget runs out.
    """
    cfg = cfg or SolverConfig()
    _check_shapes(dataset, penalty)
    lipschitz = smooth_lipschitz(dataset, loss)
    b0 = np.zeros(dataset.p) if start is None else np.asarray(start, dtype=float)
    weights = np.ones(dataset.n)
    solved = _solve(dataset, loss, penalty, cfg, weights, b0, lipschitz)
    return _finish(dataset, loss, penalty, cfg, solved, lipschitz)


def fit_leave_one_out(
    dataset: Dataset,
    loss: LossSpec,
    penalty: PenaltySpec,
    i: int,
    warm: Optional[FitResult] = None,
    cfg: Optional[SolverConfig] = None,
) -> FitResult:
    """Solve the problem with observation i removed, warm-started at warm.b_hat.

    The returned predictions and curvature are evaluated on all n rows; the
    solution itself ignores row i.
    """
    cfg = cfg or SolverConfig()
    if not 0 <= i < dataset.n:
        raise InvalidSpec(f"index {i} outside 0..{dataset.n - 1}")
    _check_shapes(dataset, penalty)
    # dropping a row cannot increase ||X||_op
    lipschitz = warm.lipschitz if warm is not None else smooth_lipschitz(dataset, loss)
    b0 = warm.b_hat if warm is not None else np.zeros(dataset.p)
    weights = np.ones(dataset.n)
    weights[i] = 0.0
    solved = _solve(dataset, loss, penalty, cfg, weights, b0, lipschitz)
    return _finish(dataset, loss, penalty, cfg, solved, lipschitz)
