"""Tests for the proximal solver and the KKT certificate."""

import numpy as np
import pytest

from src.errors import InvalidSpec, MaxIterExceeded
from src.model import Dataset, LossSpec, PenaltySpec, contiguous_groups
from src.solver import SolverConfig, fit, fit_leave_one_out, kkt_residual, prox, soft_threshold

SQUARE = LossSpec.square()
HUBER = LossSpec.huber(1.0)


def one_point():
    """n=1, p=1 instance x=[2], y=[3] with n nu = 4."""
    return Dataset(np.array([[2.0]]), np.array([3.0])), PenaltySpec.ridge(4.0, 1)


def gaussian_instance(n, p, seed, logistic=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p)) / np.sqrt(p)
    beta = rng.standard_normal(p)
    t = x @ beta
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-t))).astype(float) if logistic else t + rng.standard_normal(n)
    return Dataset(x, y)


def test_one_point_ridge():
    """Test the closed-form n=1 ridge solution b = 0.75."""
    data, ridge = one_point()
    result = fit(data, SQUARE, ridge)
    assert abs(result.b_hat[0] - 0.75) < 1e-9
    assert result.certified
    assert result.kkt_residual <= result.tol
    assert np.allclose(result.predictions, data.x @ result.b_hat, rtol=1e-12)


def test_zero_design_gives_zero():
    """Test that X = 0 leaves the penalty minimizer b = 0."""
    data = Dataset(np.zeros((3, 2)), np.array([1.0, -2.0, 3.0]))
    for penalty in (PenaltySpec.ridge(1.0, 3), PenaltySpec.elastic_net(0.5, 1.0, 3)):
        result = fit(data, SQUARE, penalty)
        assert np.all(result.b_hat == 0)


def test_elastic_net_kkt_zero_solution():
    """Test b = 0 when lambda >= |X^T y|."""
    data = Dataset(np.array([[1.0]]), np.array([1.0]))
    result = fit(data, SQUARE, PenaltySpec.elastic_net(2.0, 1.0, 1))
    assert result.b_hat[0] == 0.0
    assert result.active_set.size == 0


def test_kkt_residual_examples():
    """Test the residual for ridge at b = 0 and for the elastic net inside the subdifferential."""
    data, ridge = one_point()
    assert kkt_residual(data, SQUARE, ridge, np.zeros(1)) == pytest.approx(1.0)

    data = Dataset(np.array([[1.0, 0.5], [0.0, 1.0]]), np.array([0.5, 0.5]))
    # s = X^T y = (0.5, 0.75), both below lambda = 1
    assert kkt_residual(data, SQUARE, PenaltySpec.elastic_net(1.0, 1.0, 2), np.zeros(2)) == 0.0


def test_soft_threshold_and_prox():
    """Test prox closed forms for the three families."""
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0

    ridge = PenaltySpec.ridge(2.0, 3)
    assert np.allclose(prox(ridge, np.array([7.0, -7.0]), 0.5), [7.0 / 4.0, -7.0 / 4.0])

    enet = PenaltySpec.elastic_net(1.0, 1.0, 1)
    assert np.allclose(prox(enet, np.array([3.0, 0.2]), 1.0), [1.0, 0.0])

    group = PenaltySpec.group_lasso([[0, 1]], [1.0], 1.0, 1)
    assert np.all(prox(group, np.array([0.3, 0.4]), 1.0) == 0)

    with pytest.raises(InvalidSpec):
        prox(ridge, np.ones(2), 0.0)


def test_enet_rejects_zero_nu():
    """Test that the elastic net needs nu > 0."""
    with pytest.raises(InvalidSpec):
        PenaltySpec.elastic_net(1.0, 0.0, 1)


@pytest.mark.parametrize("loss", [SQUARE, HUBER, LossSpec.logistic()], ids=lambda l: l.family)
@pytest.mark.parametrize("family", ["ridge", "enet", "group"])
def test_fit_certified_and_monotone(loss, family):
    """Test certification and monotone objective across loss and penalty families."""
    data = gaussian_instance(50, 20, seed=11, logistic=loss.family == "logistic")
    if family == "ridge":
        penalty = PenaltySpec.ridge(0.1, 50)
    elif family == "enet":
        penalty = PenaltySpec.elastic_net(0.5, 0.1, 50)
    else:
        groups = contiguous_groups(20, 4)
        penalty = PenaltySpec.group_lasso(groups, [0.5] * len(groups), 0.1, 50)

    result = fit(data, loss, penalty)
    assert result.certified
    assert kkt_residual(data, loss, penalty, result.b_hat) <= 1e-9

    history = result.objective_history
    assert np.all(np.diff(history) <= 1e-12 * max(1.0, abs(history[0])))
    assert np.all((result.curvature_diag >= 0) & (result.curvature_diag <= 1))


def test_determinism():
    """Test that repeated fits are bitwise identical."""
    data = gaussian_instance(40, 15, seed=5)
    penalty = PenaltySpec.elastic_net(0.3, 0.2, 40)
    first = fit(data, HUBER, penalty)
    second = fit(data, HUBER, penalty)
    assert np.array_equal(first.b_hat, second.b_hat)


def test_max_iter_exceeded_carries_result():
    """Test that an exhausted budget raises with the non-certified iterate."""
    data, ridge = one_point()
    with pytest.raises(MaxIterExceeded) as info:
        fit(data, SQUARE, ridge, SolverConfig(tol=1e-15, max_iter=1))
    assert info.value.result is not None
    assert not info.value.result.certified
    assert info.value.result.to_dict()["certified"] is False


def test_solver_config_validation():
    """Test rejection of non-positive tolerance and iteration budget."""
    with pytest.raises(InvalidSpec):
        SolverConfig(tol=0.0)
    with pytest.raises(InvalidSpec):
        SolverConfig(max_iter=0)


def test_penalty_scale_must_match_n():
    """Test that n_scale must equal the number of rows."""
    data, _ = one_point()
    with pytest.raises(InvalidSpec):
        fit(data, SQUARE, PenaltySpec.ridge(4.0, 2))


def test_leave_one_out_single_point():
    """Test that removing the only observation gives b = 0."""
    data, ridge = one_point()
    warm = fit(data, SQUARE, ridge)
    loo = fit_leave_one_out(data, SQUARE, ridge, 0, warm)
    assert abs(loo.b_hat[0]) < 1e-9

    with pytest.raises(InvalidSpec):
        fit_leave_one_out(data, SQUARE, ridge, 1, warm)


def test_leave_one_out_duplicate_rows():
    """Test that leaving out either of two identical rows gives the same solution."""
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    x[1], y[1] = x[0], y[0]
    data = Dataset(x, y)
    penalty = PenaltySpec.elastic_net(0.2, 0.5, 6)
    cfg = SolverConfig(tol=1e-12)
    warm = fit(data, HUBER, penalty, cfg)
    first = fit_leave_one_out(data, HUBER, penalty, 0, warm, cfg)
    second = fit_leave_one_out(data, HUBER, penalty, 1, warm, cfg)
    assert np.max(np.abs(first.b_hat - second.b_hat)) < 1e-9


def test_leave_one_out_proximity_small_instance():
    """Test n mu ||b - b^i|| <= ||x_i|| |L'_i| on an n=3 Huber ridge instance."""
    rng = np.random.default_rng(9)
    data = Dataset(rng.standard_normal((3, 2)), 3.0 * rng.standard_normal(3))
    penalty = PenaltySpec.ridge(0.5, 3)
    cfg = SolverConfig(tol=1e-12)
    full = fit(data, HUBER, penalty, cfg)
    for i in range(3):
        loo = fit_leave_one_out(data, HUBER, penalty, i, full, cfg)
        lhs = penalty.n_nu * np.linalg.norm(full.b_hat - loo.b_hat)
        rhs = np.linalg.norm(data.x[i]) * abs(full.d1[i])
        assert lhs <= rhs + 1e-6


def test_warm_start_independence():
    """Test that leave-one-out solutions do not depend on the warm start beyond 10 tol."""
    data = gaussian_instance(30, 10, seed=4)
    penalty = PenaltySpec.elastic_net(0.2, 0.3, 30)
    cfg = SolverConfig(tol=1e-10)
    warm = fit(data, HUBER, penalty, cfg)
    with_warm = fit_leave_one_out(data, HUBER, penalty, 3, warm, cfg)
    cold = fit_leave_one_out(data, HUBER, penalty, 3, None, cfg)
    assert np.max(np.abs(with_warm.b_hat - cold.b_hat)) < 1e-8


def test_group_support_reports_whole_groups():
    """Test that active groups expand to their coordinates."""
    data = gaussian_instance(40, 8, seed=8)
    groups = contiguous_groups(8, 2)
    penalty = PenaltySpec.group_lasso(groups, [2.0] * 4, 0.2, 40)
    result = fit(data, SQUARE, penalty)
    expected = sorted(int(j) for k in result.active_groups for j in groups[k])
    assert result.active_set.tolist() == expected
