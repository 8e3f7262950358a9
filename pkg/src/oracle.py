"""Brute-force and finite-difference references.

Only model, errors and solver.fit are used here so the oracles never share a
code path with the curvature or risk computations they are compared against.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from src.errors import InvalidSpec, SupportChanged, WrongLoss
from src.model import Dataset, FitResult, LossSpec, PenaltySpec
from src.solver import SolverConfig, fit

logger = logging.getLogger(__name__)

GRID_POINTS = 201
MAX_ZOOMS = 40


@dataclass(frozen=True)
class ProbeConfig:
    """Finite-difference step, probe count, comparison tolerance and refit accuracy."""

    fd_step: float = 1e-5
    n_probes: int = 200
    tolerance: float = 1e-4
    solver_tol: float = 1e-10

    def __post_init__(self):
        if not self.fd_step > 0:
            raise InvalidSpec("fd_step must be > 0")
        if self.n_probes < 1:
            raise InvalidSpec("n_probes must be >= 1")
        if not self.tolerance > 0:
            raise InvalidSpec("tolerance must be > 0")

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.solver_tol)


def _with(dataset: Dataset, x=None, y=None) -> Dataset:
    return Dataset(
        dataset.x if x is None else x,
        dataset.y if y is None else y,
        sigma=dataset.sigma,
        truth=dataset.truth,
        seed_info=dataset.seed_info,
    )


def _same_support(penalty: PenaltySpec, plus: FitResult, minus: FitResult):
    if penalty.family == "ridge":
        return
    if not (np.array_equal(plus.active_set, minus.active_set)
            and np.array_equal(plus.active_groups, minus.active_groups)):
        raise SupportChanged(
            f"active set changed across the probe ({plus.active_set.size} vs {minus.active_set.size} coordinates)"
        )


def jacobian_fd(dataset: Dataset, loss: LossSpec, penalty: PenaltySpec, cfg: ProbeConfig, i: int, j: int) -> np.ndarray:
    """Central difference (b(x_ij + h) - b(x_ij - h)) / 2h from two full refits."""
    h = cfg.fd_step * max(1.0, abs(float(dataset.x[i, j])))
    solver_cfg = cfg.solver()
    fits = []
    for sign in (1.0, -1.0):
        x = np.array(dataset.x)
        x[i, j] += sign * h
        fits.append(fit(_with(dataset, x=x), loss, penalty, solver_cfg))
    _same_support(penalty, *fits)
    return (fits[0].b_hat - fits[1].b_hat) / (2.0 * h)


def derivative_agreement(
    dataset: Dataset,
    loss: LossSpec,
    penalty: PenaltySpec,
    cfg: ProbeConfig,
    closed_form: Callable[[int, int], np.ndarray],
    seed: Optional[int] = 0,
) -> Tuple[int, int]:
    """Compare jacobian_fd with closed_form(i, j) at cfg.n_probes random entries (i, j).

    Entries whose perturbation moves the active set are skipped. Returns
    (agree, skipped); agree counts compared entries within cfg.tolerance.
    """
    rng = np.random.default_rng(seed)
    agree = skipped = 0
    for _ in range(cfg.n_probes):
        i, j = int(rng.integers(dataset.n)), int(rng.integers(dataset.p))
        try:
            fd = jacobian_fd(dataset, loss, penalty, cfg, i, j)
        except SupportChanged as exc:
            logger.warning("skipping derivative check at (%d, %d): %s", i, j, exc)
            skipped += 1
            continue
        closed = np.asarray(closed_form(i, j))
        if float(np.max(np.abs(fd - closed))) <= cfg.tolerance * max(1.0, float(np.max(np.abs(closed)))):
            agree += 1
    logger.debug("derivative checks: %d agree, %d skipped of %d", agree, skipped, cfg.n_probes)
    return agree, skipped


def hat_matrix_fd(dataset: Dataset, loss: LossSpec, penalty: PenaltySpec, cfg: ProbeConfig) -> np.ndarray:
    """Column k is (X b(y + h e_k) - X b(y - h e_k)) / 2h (square loss)."""
    if loss.family != "square":
        raise WrongLoss("the finite-difference hat matrix needs the square loss")
    solver_cfg = cfg.solver()
    out = np.zeros((dataset.n, dataset.n))
    for k in range(dataset.n):
        h = cfg.fd_step * max(1.0, abs(float(dataset.y[k])))
        fits = []
        for sign in (1.0, -1.0):
            y = np.array(dataset.y)
            y[k] += sign * h
            fits.append(fit(_with(dataset, y=y), loss, penalty, solver_cfg))
        _same_support(penalty, *fits)
        out[:, k] = dataset.x @ (fits[0].b_hat - fits[1].b_hat) / (2.0 * h)
    return out


def prox_objective(penalty: PenaltySpec, v: np.ndarray, step: float, b: np.ndarray) -> float:
    """||b - v||^2 / (2 step) + R(b)."""
    diff = np.asarray(b, dtype=float) - np.asarray(v, dtype=float)
    return float(diff @ diff) / (2.0 * step) + penalty.value(b)


def _zoom_1d(objective: Callable[[float], float], lo: float, hi: float, resolution: float) -> float:
    """Nested grid search on [lo, hi] down to `resolution`, polished by a bounded scalar minimization."""
    best = lo
    for _ in range(MAX_ZOOMS):
        grid = np.linspace(lo, hi, GRID_POINTS)
        values = [objective(t) for t in grid]
        k = int(np.argmin(values))
        best = float(grid[k])
        spacing = (hi - lo) / (GRID_POINTS - 1)
        if spacing <= resolution:
            break
        lo, hi = best - spacing, best + spacing
    polished = minimize_scalar(objective, bounds=(best - resolution, best + resolution), method="bounded",
                               options={"xatol": resolution * 1e-4})
    return float(polished.x) if polished.fun <= objective(best) else best


def _zoom_2d(objective: Callable[[np.ndarray], float], radius: float, resolution: float) -> np.ndarray:
    centre = np.zeros(2)
    half = radius
    side = 41
    for _ in range(MAX_ZOOMS):
        axis = np.linspace(-half, half, side)
        g1, g2 = np.meshgrid(centre[0] + axis, centre[1] + axis, indexing="ij")
        values = np.array([[objective(np.array([a, b])) for a, b in zip(r1, r2)] for r1, r2 in zip(g1, g2)])
        k1, k2 = np.unravel_index(int(np.argmin(values)), values.shape)
        centre = np.array([g1[k1, k2], g2[k1, k2]])
        spacing = 2.0 * half / (side - 1)
        if spacing <= resolution:
            break
        half = 2.0 * spacing
    return centre


def prox_bruteforce(penalty: PenaltySpec, v: np.ndarray, step: float, grid_resolution: float = 1e-4) -> np.ndarray:
    """Grid minimizer of the prox objective, one coordinate (ridge, enet) or one group at a time.

    Groups of size <= 2 are searched on a 2-D grid; larger groups on the ray
    through v_G, where every minimizer lies by rotational invariance.
    """
    if not step > 0:
        raise InvalidSpec("prox step must be > 0")
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    n_nu = penalty.n_nu
    if penalty.family in ("ridge", "enet"):
        lam = penalty.lam if penalty.family == "enet" else 0.0
        for j, vj in enumerate(v):
            def objective(t, vj=vj):
                return (t - vj) ** 2 / (2.0 * step) + lam * abs(t) + 0.5 * n_nu * t * t
            reach = abs(vj) + grid_resolution
            out[j] = _zoom_1d(objective, -reach, reach, grid_resolution)
        return out
    for g, lam_k in zip(penalty.groups, penalty.weights):
        vg = v[g]
        radius = float(np.linalg.norm(vg))

        def group_objective(b, vg=vg, lam_k=lam_k):
            return float((b - vg) @ (b - vg)) / (2.0 * step) + lam_k * float(np.linalg.norm(b)) + 0.5 * n_nu * float(b @ b)

        if radius == 0.0:
            continue
        if g.size == 1:
            out[g] = _zoom_1d(lambda t: group_objective(np.array([t])), -radius - grid_resolution,
                              radius + grid_resolution, grid_resolution)
        elif g.size == 2:
            out[g] = _zoom_2d(group_objective, radius + grid_resolution, grid_resolution)
        else:
            direction = vg / radius
            scale = _zoom_1d(lambda c: group_objective(c * direction), 0.0, radius + grid_resolution, grid_resolution)
            out[g] = scale * direction
    return out


def _f_leverage(x, d, h_pen, i):
    system = x.T @ (d[:, None] * x) + h_pen
    return float(d[i] * x[i] @ np.linalg.solve(system, x[i]))


def _f_trace(x, d, h_pen, i):
    system = x.T @ (d[:, None] * x) + h_pen
    return float(np.trace(np.linalg.inv(system)))


def lipschitz_constants(h_pen: np.ndarray) -> tuple:
    """Stated Lipschitz constants (4 ||H^{-1}||^{1/2}, 2 sqrt(p) ||H^{-1}||^{3/2}) of the leverage and trace maps."""
    h_inv = 1.0 / float(np.linalg.eigvalsh(h_pen)[0])
    p = h_pen.shape[0]
    return 4.0 * math.sqrt(h_inv), 2.0 * math.sqrt(p) * h_inv ** 1.5


def lipschitz_probe(
    fn: str,
    x: np.ndarray,
    d: np.ndarray,
    h_pen: np.ndarray,
    n_probes: int,
    eps: float = 1e-4,
    i: int = 0,
    seed: Optional[int] = 0,
) -> float:
    """Largest |fn(X + eps Delta) - fn(X)| / eps over random Frobenius-unit Delta.

    fn is "f" for X -> D_ii x_i^T (X^T D X + H)^{-1} x_i or "F" for
    X -> tr[(X^T D X + H)^{-1}].
    """
    if fn not in ("f", "F"):
        raise InvalidSpec(f"unknown probe function {fn!r}; expected 'f' or 'F'")
    if float(np.linalg.eigvalsh(h_pen)[0]) <= 0:
        raise InvalidSpec("h_pen must be positive definite")
    evaluate = _f_leverage if fn == "f" else _f_trace
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    rng = np.random.default_rng(seed)
    base = evaluate(x, d, h_pen, i)
    worst = 0.0
    for _ in range(n_probes):
        delta = rng.standard_normal(x.shape)
        delta /= np.linalg.norm(delta)
        worst = max(worst, abs(evaluate(x + eps * delta, d, h_pen, i) - base) / eps)
    return worst


def a_hat_limit(dataset: Dataset, penalty: PenaltySpec, fit_result: FitResult, t: float = 1e10) -> np.ndarray:
    """(X^T D X + H_pen + t P)^{-1}, P the projector onto the inactive coordinates.

    As t grows the support block converges to the restricted inverse and the
    rest vanishes.
    """
    p = dataset.p
    system = dataset.x.T @ (fit_result.curvature_diag[:, None] * dataset.x) + penalty.n_nu * np.eye(p)
    if penalty.family == "group":
        for k in fit_result.active_groups:
            g = penalty.groups[k]
            bg = fit_result.b_hat[g]
            norm = float(np.linalg.norm(bg))
            system[np.ix_(g, g)] += penalty.weights[k] / norm * (np.eye(g.size) - np.outer(bg, bg) / norm ** 2)
    if penalty.family != "ridge":
        inactive = np.setdiff1d(np.arange(p), fit_result.active_set)
        system[inactive, inactive] += t
    return np.linalg.inv(system)
