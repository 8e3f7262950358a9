"""Tests comparing closed forms with brute-force and finite-difference references."""

import numpy as np
import pytest

from src.curvature import a_hat, coefficient_derivative, hat_matrix
from src.errors import InvalidSpec, SupportChanged, WrongLoss
from src.model import Dataset, LossSpec, PenaltySpec, contiguous_groups
from src.oracle import (
    ProbeConfig,
    a_hat_limit,
    derivative_agreement,
    hat_matrix_fd,
    jacobian_fd,
    lipschitz_constants,
    lipschitz_probe,
    prox_bruteforce,
    prox_objective,
)
from src.solver import SolverConfig, fit, prox

SQUARE = LossSpec.square()
HUBER = LossSpec.huber(1.0)
PRECISE = ProbeConfig(solver_tol=1e-12)


def random_prox_case(rng, family, p):
    v = 2.0 * rng.standard_normal(p)
    step = float(rng.uniform(0.1, 2.0))
    nu = float(rng.uniform(0.01, 1.0))
    lam = float(rng.uniform(0.0, 2.0))
    if family == "ridge":
        return PenaltySpec.ridge(nu, 1), v, step
    if family == "enet":
        return PenaltySpec.elastic_net(lam, nu, 1), v, step
    groups = contiguous_groups(p, {"group1": 1, "group2": 2, "group3": 3}[family])
    return PenaltySpec.group_lasso(groups, [lam] * len(groups), nu, 1), v, step


@pytest.mark.parametrize("family,p", [("ridge", 4), ("enet", 4), ("group1", 4), ("group3", 6)])
def test_prox_matches_bruteforce(family, p):
    """Test the closed-form prox against a grid search on 200 probes."""
    rng = np.random.default_rng(31)
    for _ in range(200):
        penalty, v, step = random_prox_case(rng, family, p)
        closed = prox(penalty, v, step)
        brute = prox_bruteforce(penalty, v, step)
        assert np.max(np.abs(closed - brute)) <= 1e-6


def test_prox_two_dimensional_groups():
    """Test size-2 groups by objective value; the planar grid is only resolution-accurate."""
    rng = np.random.default_rng(32)
    for _ in range(20):
        penalty, v, step = random_prox_case(rng, "group2", 4)
        closed = prox(penalty, v, step)
        brute = prox_bruteforce(penalty, v, step)
        assert prox_objective(penalty, v, step, closed) <= prox_objective(penalty, v, step, brute) + 1e-12
        assert np.max(np.abs(closed - brute)) <= 1e-3


def test_soft_threshold_example():
    """Test prox(3) = 2 for lambda = 1, step = 1 and negligible ridge."""
    enet = PenaltySpec.elastic_net(1.0, 1e-12, 1)
    assert abs(prox_bruteforce(enet, np.array([3.0]), 1.0)[0] - 2.0) <= 1e-6
    with pytest.raises(InvalidSpec):
        prox_bruteforce(enet, np.array([3.0]), 0.0)


def test_hat_matrix_fd_one_point():
    """Test dX b / dy = 0.5 on x=[2], y=[3] with n nu = 4."""
    data = Dataset(np.array([[2.0]]), np.array([3.0]))
    h = hat_matrix_fd(data, SQUARE, PenaltySpec.ridge(4.0, 1), PRECISE)
    assert h[0, 0] == pytest.approx(0.5, abs=1e-4)
    with pytest.raises(WrongLoss):
        hat_matrix_fd(data, HUBER, PenaltySpec.ridge(4.0, 1), PRECISE)


def test_hat_matrix_fd_heavy_ridge():
    """Test that a huge nu pushes H to zero."""
    rng = np.random.default_rng(33)
    data = Dataset(rng.standard_normal((5, 3)), rng.standard_normal(5))
    h = hat_matrix_fd(data, SQUARE, PenaltySpec.ridge(1e8, 5), PRECISE)
    assert np.max(np.abs(h)) < 1e-6


def test_hat_matrix_fd_elastic_net():
    """Test that the finite-difference hat matrix is symmetric and matches X A X^T."""
    rng = np.random.default_rng(34)
    x = rng.standard_normal((8, 4)) / 2.0
    data = Dataset(x, 2.0 * x[:, 0] - x[:, 1] + 0.3 * rng.standard_normal(8))
    enet = PenaltySpec.elastic_net(0.2, 0.5, 8)
    fd = hat_matrix_fd(data, SQUARE, enet, PRECISE)
    assert np.max(np.abs(fd - fd.T)) <= 1e-4

    result = fit(data, SQUARE, enet, SolverConfig(tol=1e-12))
    closed = hat_matrix(data, SQUARE, enet, result).matrix
    assert np.max(np.abs(fd - closed)) <= 1e-4


def test_jacobian_matches_closed_form_ridge():
    """Test d b / d x_ij against A(-e_j L'_i - x_i D_ii b_j) for Huber ridge."""
    rng = np.random.default_rng(35)
    data = Dataset(rng.standard_normal((20, 6)) / 2.0, 1.5 * rng.standard_normal(20))
    ridge = PenaltySpec.ridge(0.3, 20)
    result = fit(data, HUBER, ridge, SolverConfig(tol=1e-12))
    a = a_hat(data, ridge, result)
    for i, j in [(0, 0), (3, 2), (7, 5), (19, 1)]:
        fd = jacobian_fd(data, HUBER, ridge, PRECISE, i, j)
        closed = coefficient_derivative(data, result, a, i, j)
        assert np.max(np.abs(fd - closed)) <= 1e-4 * max(1.0, float(np.max(np.abs(closed))))


def test_jacobian_zero_response():
    """Test that y = 0 gives b = 0 and a zero derivative."""
    rng = np.random.default_rng(36)
    data = Dataset(rng.standard_normal((6, 3)), np.zeros(6))
    ridge = PenaltySpec.ridge(0.5, 6)
    result = fit(data, SQUARE, ridge)
    a = a_hat(data, ridge, result)
    assert np.all(jacobian_fd(data, SQUARE, ridge, PRECISE, 2, 1) == 0)
    assert np.all(coefficient_derivative(data, result, a, 2, 1) == 0)


def test_jacobian_support_change():
    """Test SupportChanged when the probe crosses the soft-threshold boundary."""
    data = Dataset(np.array([[0.5]]), np.array([2.0]))
    enet = PenaltySpec.elastic_net(1.0, 1.0, 1)
    with pytest.raises(SupportChanged):
        jacobian_fd(data, SQUARE, enet, PRECISE, 0, 0)


def derivative_instance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((60, 30)) / np.sqrt(30)
    return Dataset(x, 4.0 * x[:, 0] - 3.0 * x[:, 5] + rng.standard_normal(60))


def test_derivative_formula_reduced():
    """Test finite differences against the closed form on at least 95% of Huber ridge entries."""
    data = derivative_instance(37)
    ridge = PenaltySpec.ridge(0.1, 60)
    cfg = ProbeConfig(n_probes=40)
    result = fit(data, HUBER, ridge, cfg.solver())
    a = a_hat(data, ridge, result)
    agree, skipped = derivative_agreement(
        data, HUBER, ridge, cfg, lambda i, j: coefficient_derivative(data, result, a, i, j), seed=1,
    )
    assert skipped == 0
    assert agree >= 0.95 * cfg.n_probes


def test_derivative_formula_elastic_net():
    """Test Huber elastic net with support screening: skips under 20%, 95% of the rest agree."""
    data = derivative_instance(41)
    enet = PenaltySpec.elastic_net(0.1 * np.sqrt(60 * np.log(30)), 0.1, 60)
    cfg = ProbeConfig(n_probes=40)
    result = fit(data, HUBER, enet, cfg.solver())
    assert result.active_set.size > 0
    a = a_hat(data, enet, result)
    agree, skipped = derivative_agreement(
        data, HUBER, enet, cfg, lambda i, j: coefficient_derivative(data, result, a, i, j), seed=2,
    )
    assert skipped < 0.2 * cfg.n_probes
    assert agree >= 0.95 * (cfg.n_probes - skipped)


def test_derivative_agreement_counts_skips(caplog):
    """Test that support changes are skipped, counted and logged."""
    data = Dataset(np.array([[0.5]]), np.array([2.0]))
    enet = PenaltySpec.elastic_net(1.0, 1.0, 1)
    cfg = ProbeConfig(n_probes=3, solver_tol=1e-12)
    with caplog.at_level("WARNING", logger="src.oracle"):
        agree, skipped = derivative_agreement(data, SQUARE, enet, cfg, lambda i, j: np.zeros(1))
    assert (agree, skipped) == (0, 3)
    assert sum("skipping derivative check" in r.message for r in caplog.records) == 3


def test_lipschitz_probes_within_constants():
    """Test the leverage and trace maps against their Lipschitz constants."""
    rng = np.random.default_rng(38)
    x = rng.standard_normal((20, 5))
    d = rng.uniform(0.0, 1.0, 20)
    h_pen = 5.0 * np.eye(5)
    k_lev, k_trace = lipschitz_constants(h_pen)
    assert k_lev == pytest.approx(4.0 / np.sqrt(5.0))
    assert k_trace == pytest.approx(2.0 * np.sqrt(5.0) * 5.0 ** -1.5)

    for i in (0, 7):
        assert lipschitz_probe("f", x, d, h_pen, 50, i=i) <= k_lev * 1.001
    assert lipschitz_probe("F", x, d, h_pen, 50) <= k_trace * 1.001


def test_lipschitz_probe_step_consistency():
    """Test that shrinking eps barely moves the probe."""
    rng = np.random.default_rng(39)
    x = rng.standard_normal((15, 4))
    d = rng.uniform(0.0, 1.0, 15)
    h_pen = 2.0 * np.eye(4)
    coarse = lipschitz_probe("F", x, d, h_pen, 30, eps=1e-4, seed=5)
    fine = lipschitz_probe("F", x, d, h_pen, 30, eps=1e-5, seed=5)
    assert abs(coarse - fine) <= 1e-3
    with pytest.raises(InvalidSpec):
        lipschitz_probe("g", x, d, h_pen, 1)
    with pytest.raises(InvalidSpec):
        lipschitz_probe("f", x, d, -np.eye(4), 1)


@pytest.mark.parametrize("family", ["enet", "group"])
def test_a_hat_limit_matches_restricted_inverse(family):
    """Test that the large-t limit reproduces the support-restricted A."""
    rng = np.random.default_rng(40)
    x = rng.standard_normal((40, 9))
    data = Dataset(x, 2.0 * x[:, 0] - 1.5 * x[:, 4] + 0.5 * rng.standard_normal(40))
    if family == "enet":
        penalty = PenaltySpec.elastic_net(40.0, 0.1, 40)
    else:
        groups = contiguous_groups(9, 3)
        penalty = PenaltySpec.group_lasso(groups, [60.0] * 3, 0.1, 40)
    result = fit(data, SQUARE, penalty)
    assert 0 < result.active_set.size < 9
    limit = a_hat_limit(data, penalty, result)
    assert np.max(np.abs(limit - a_hat(data, penalty, result).matrix)) <= 1e-6


def test_probe_config_validation():
    """Test rejection of non-positive steps, counts and tolerances."""
    with pytest.raises(InvalidSpec):
        ProbeConfig(fd_step=0.0)
    with pytest.raises(InvalidSpec):
        ProbeConfig(n_probes=0)
    with pytest.raises(InvalidSpec):
        ProbeConfig(tolerance=-1.0)
