"""Tests for losses, penalties, test functions and datasets."""

import math

import numpy as np
import pytest

from src.errors import DomainError, InvalidSpec
from src.model import (
    Dataset,
    LossSpec,
    PenaltySpec,
    SeedInfo,
    TestFunction,
    activity_threshold,
    contiguous_groups,
    loss_eval,
    parse_loss,
    parse_penalty,
    parse_test_function,
    test_function_eval,
)

LOSSES = [LossSpec.square(), LossSpec.huber(1.0), LossSpec.huber(0.3), LossSpec.logistic()]


def test_square_loss_values():
    """Test square loss value and derivatives at y=3, t=1.5."""
    assert loss_eval(LossSpec.square(), 3.0, 1.5) == (1.125, -1.5, 1.0)


def test_huber_branches():
    """Test Huber derivatives on the quadratic and linear branches."""
    huber = LossSpec.huber(1.0)
    _, d1, d2 = loss_eval(huber, 0.0, 0.5)
    assert d1 == 0.5 and d2 == 1.0

    value, d1, d2 = loss_eval(huber, 0.0, 2.0)
    assert d1 == 1.0 and d2 == 0.0
    assert value == 1.5


def test_loss_eval_rejects_non_finite():
    """Test that NaN or inf inputs raise DomainError."""
    with pytest.raises(DomainError):
        loss_eval(LossSpec.square(), 1.0, float("nan"))
    with pytest.raises(DomainError):
        loss_eval(LossSpec.logistic(), 1.0, float("inf"))


@pytest.mark.parametrize("loss", LOSSES, ids=lambda l: l.label())
def test_loss_properties(loss):
    """Test curvature range, derivative consistency and convexity on random probes."""
    rng = np.random.default_rng(7)
    t = 3.0 * rng.standard_normal(1000)
    if loss.family == "logistic":
        y = rng.integers(0, 2, size=1000).astype(float)
    else:
        y = 3.0 * rng.standard_normal(1000)

    d2 = loss.d2(y, t)
    assert np.all(d2 >= 0) and np.all(d2 <= 1)

    h = 1e-6
    fd = (loss.value(y, t + h) - loss.value(y, t - h)) / (2 * h)
    assert np.max(np.abs(fd - loss.d1(y, t))) < 1e-6

    s = 2.0 * rng.standard_normal(1000)
    mid = loss.value(y, t)
    avg = 0.5 * (loss.value(y, t - s) + loss.value(y, t + s))
    assert np.all(mid <= avg + 1e-10)


def test_lipschitz_flags():
    """Test which losses are flagged 1-Lipschitz."""
    assert LossSpec.square().lipschitz_flags == (False, True)
    assert LossSpec.huber(1.0).lipschitz_flags == (True, True)
    assert LossSpec.huber(2.0).lipschitz_flags == (False, True)
    assert LossSpec.logistic().curvature_bound == 0.25


def test_bad_loss_parameters():
    """Test rejection of unknown families and non-positive thresholds."""
    with pytest.raises(InvalidSpec):
        LossSpec("hinge")
    with pytest.raises(InvalidSpec):
        LossSpec.huber(0.0)


def test_test_function_examples():
    """Test squared, absolute and misclassification examples."""
    assert test_function_eval(TestFunction("sq"), 0.0, 3.0) == 9.0
    assert test_function_eval(TestFunction("abs"), 1.7, 1.7) == 0.0
    assert test_function_eval(TestFunction("mis", 0.5), 0.7, 1.0) == 0.0
    assert test_function_eval(TestFunction("mis", 0.5), 0.3, 1.0) == 1.0


def test_deviance():
    """Test logistic deviance 2(log(1+e^a) - y a)."""
    g = TestFunction("dev")
    assert math.isclose(float(g(0.0, 1.0)), 2.0 * math.log(2.0))
    assert math.isclose(float(g(1.0, 1.0)), 2.0 * (math.log1p(math.e) - 1.0))


def test_growth_condition_flags():
    """Test that only squared and absolute error satisfy the growth condition."""
    assert TestFunction("sq").satisfies_growth
    assert TestFunction("abs").satisfies_growth
    assert not TestFunction("mis").satisfies_growth
    assert not TestFunction("dev").satisfies_growth


def test_growth_condition_holds_for_sq_and_abs():
    """Test |g(x,y) - g(x',y)| <= |x - x'|(1 + |x| + |x'|) on random probes."""
    rng = np.random.default_rng(3)
    x, x2, y = rng.standard_normal((3, 500)) * 4
    rhs = np.abs(x - x2) * (1 + np.abs(x) + np.abs(x2))

    g = TestFunction("abs")
    assert np.all(np.abs(g(x, y) - g(x2, y)) <= rhs + 1e-12)

    g = TestFunction("sq")
    zero = np.zeros_like(y)
    assert np.all(np.abs(g(x, zero) - g(x2, zero)) <= rhs + 1e-12)


def test_penalty_validation():
    """Test strong convexity and group partition requirements."""
    with pytest.raises(InvalidSpec):
        PenaltySpec.ridge(0.0, 10)
    with pytest.raises(InvalidSpec):
        PenaltySpec.elastic_net(1.0, 0.0, 10)
    with pytest.raises(InvalidSpec):
        PenaltySpec.elastic_net(-1.0, 1.0, 10)
    with pytest.raises(InvalidSpec):
        PenaltySpec.group_lasso([[0, 1], [1, 2]], [1.0, 1.0], 1.0, 10)
    with pytest.raises(InvalidSpec):
        PenaltySpec.group_lasso([[0, 2]], [1.0], 1.0, 10)
    with pytest.raises(InvalidSpec):
        PenaltySpec.group_lasso([[0], [1]], [1.0], 1.0, 10)


def test_penalty_values_and_mu_eff():
    """Test penalty values and the effective strong-convexity constant."""
    b = np.array([1.0, -2.0, 2.0])
    assert PenaltySpec.ridge(0.5, 4).value(b) == pytest.approx(0.5 * 2.0 * 9.0)
    assert PenaltySpec.elastic_net(2.0, 0.5, 4).value(b) == pytest.approx(10.0 + 9.0)
    group = PenaltySpec.group_lasso([[0], [1, 2]], [1.0, 3.0], 0.5, 4)
    assert group.value(b) == pytest.approx(1.0 + 3.0 * math.sqrt(8.0) + 9.0)

    assert PenaltySpec.ridge(0.5, 4).mu_eff == 0.5
    sigma = np.diag([2.0, 1.0, 1.0])
    assert PenaltySpec.ridge(0.5, 4, sigma).mu_eff == pytest.approx(0.25)


def test_contiguous_groups():
    """Test partition into consecutive groups with a shorter last group."""
    groups = contiguous_groups(5, 2)
    assert [g.tolist() for g in groups] == [[0, 1], [2, 3], [4]]


def test_parsers():
    """Test the compact loss, penalty and test-function strings."""
    assert parse_loss("huber:0.5").threshold == 0.5
    assert parse_loss("huber").threshold == 1.0
    assert parse_loss("logistic").family == "logistic"

    enet = parse_penalty("enet:2,0.5", n=10, p=4)
    assert enet.lam == 2.0 and enet.nu == 0.5 and enet.n_nu == 5.0
    group = parse_penalty("group:2,1.0,0.5", n=10, p=5)
    assert [g.size for g in group.groups] == [2, 2, 1]
    assert group.dim == 5
    assert enet.label() == "enet:2,0.5"
    assert parse_loss("huber:0.5").label() == "huber:0.5"

    assert parse_test_function("mis:0.5").threshold == 0.5
    assert parse_test_function("sq").kind == "sq"

    with pytest.raises(InvalidSpec):
        parse_loss("square:1")
    with pytest.raises(InvalidSpec):
        parse_penalty("lasso:1", 10, 4)
    with pytest.raises(InvalidSpec):
        parse_penalty("ridge:abc", 10, 4)
    with pytest.raises(InvalidSpec, match="integer"):
        parse_penalty("group:2.5,1.0,0.5", 10, 5)
    with pytest.raises(InvalidSpec):
        parse_test_function("hinge")


def test_dataset_invariants():
    """Test shape, finiteness and covariance checks."""
    x = np.ones((3, 2))
    with pytest.raises(InvalidSpec):
        Dataset(x, np.ones(2))
    with pytest.raises(InvalidSpec):
        Dataset(np.array([[np.nan, 1.0]]), np.ones(1))
    with pytest.raises(InvalidSpec):
        Dataset(x, np.ones(3), sigma=np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(InvalidSpec):
        Dataset(x, np.ones(3), sigma=np.array([[1.0, 2.0], [2.0, 1.0]]))

    data = Dataset(x, np.ones(3))
    assert (data.n, data.p) == (3, 2)
    assert not data.x.flags.writeable


def test_single_index_truth_normalization():
    """Test that single-index truth must satisfy w^T Sigma w = 1."""
    x = np.ones((2, 2))
    info = SeedInfo(1, "single_index")
    Dataset(x, np.ones(2), truth=np.array([0.6, 0.8]), seed_info=info)
    with pytest.raises(InvalidSpec):
        Dataset(x, np.ones(2), truth=np.array([1.0, 1.0]), seed_info=info)


def test_activity_threshold():
    """Test the relative cutoff for active coordinates."""
    assert activity_threshold(np.array([0.0, 0.5])) == 1e-10
    assert activity_threshold(np.array([100.0])) == pytest.approx(1e-8)
