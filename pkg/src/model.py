"""Domain types: datasets, losses, penalties, test functions and fit results."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.errors import DomainError, InvalidSpec

logger = logging.getLogger(__name__)

# |b_j| > ACTIVITY_RTOL * max(1, ||b||_inf) marks coordinate j as active.
ACTIVITY_RTOL = 1e-10

LOSS_FAMILIES = ("square", "huber", "logistic")
PENALTY_FAMILIES = ("ridge", "enet", "group")
TEST_FUNCTIONS = ("sq", "abs", "dev", "mis")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def activity_threshold(b: np.ndarray) -> float:
    """Cutoff below which a coefficient (or group norm) counts as zero."""
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    return ACTIVITY_RTOL * max(1.0, scale)


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite input")


@dataclass(frozen=True)
class LossSpec:
    """Convex loss L_y(t) with first and second derivative in t.

    Square is (y - t)^2 / 2, Huber is rho(y - t) with threshold m, Logistic is
    log(1 + e^t) - y t for y in {0, 1}.
    """

    family: str
    threshold: float = 1.0

    def __post_init__(self):
        if self.family not in LOSS_FAMILIES:
            raise InvalidSpec(f"unknown loss family {self.family!r}")
        if self.family == "huber" and not (self.threshold > 0 and math.isfinite(self.threshold)):
            raise InvalidSpec("Huber threshold must be a positive finite number")

    @classmethod
    def square(cls) -> "LossSpec":
        return cls("square")

    @classmethod
    def huber(cls, m: float = 1.0) -> "LossSpec":
        return cls("huber", float(m))

    @classmethod
    def logistic(cls) -> "LossSpec":
        return cls("logistic")

    def value(self, y, t) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.family == "square":
            return 0.5 * (y - t) ** 2
        if self.family == "huber":
            m = self.threshold
            a = np.abs(y - t)
            return np.where(a <= m, 0.5 * a ** 2, m * a - 0.5 * m ** 2)
        return np.logaddexp(0.0, t) - y * t

    def d1(self, y, t) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.family == "square":
            return t - y
        if self.family == "huber":
            # chain rule: d/dt rho(y - t) = -rho'(y - t)
            return -np.clip(y - t, -self.threshold, self.threshold)
        return expit(t) - y

    def d2(self, y, t) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.family == "square":
            return np.ones(np.broadcast(y, t).shape)
        if self.family == "huber":
            return (np.abs(y - t) <= self.threshold).astype(float)
        s = expit(t)
        return s * (1.0 - s) + 0.0 * y

    @property
    def curvature_bound(self) -> float:
        """sup over (y, t) of L_y''(t)."""
        return 0.25 if self.family == "logistic" else 1.0

    @property
    def lipschitz_flags(self) -> Tuple[bool, bool]:
        """(loss is 1-Lipschitz, derivative is 1-Lipschitz)."""
        if self.family == "square":
            return False, True
        if self.family == "huber":
            return self.threshold <= 1.0, True
        return True, True

    def label(self) -> str:
        if self.family == "huber":
            return f"huber:{self.threshold:g}"
        return self.family


def loss_eval(loss: LossSpec, y: float, t: float) -> Tuple[float, float, float]:
    """Return (L_y(t), L_y'(t), L_y''(t))."""
    _check_finite(y, t)
    return float(loss.value(y, t)), float(loss.d1(y, t)), float(loss.d2(y, t))


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Strongly convex penalty R(b) with the n*nu ridge scaling.

    ridge: n nu ||b||^2 / 2
    enet:  lam ||b||_1 + n nu ||b||^2 / 2
    group: sum_k lam_k ||b_{G_k}||_2 + n nu ||b||^2 / 2
    """

    family: str
    nu: float
    n_scale: int
    lam: float = 0.0
    groups: Tuple[np.ndarray, ...] = ()
    weights: Optional[np.ndarray] = None
    mu_eff: float = field(default=0.0)

    def __post_init__(self):
        if self.family not in PENALTY_FAMILIES:
            raise InvalidSpec(f"unknown penalty family {self.family!r}")
        if not (math.isfinite(self.nu) and self.nu > 0):
            raise InvalidSpec("nu must be > 0 (strong convexity is required)")
        if self.n_scale < 1:
            raise InvalidSpec("n_scale must be >= 1")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InvalidSpec("lambda must be >= 0")
        if self.family == "group":
            self._check_groups()
        if self.mu_eff <= 0:
            object.__setattr__(self, "mu_eff", float(self.nu))

    def _check_groups(self):
        if not self.groups:
            raise InvalidSpec("group penalty needs at least one group")
        groups = tuple(np.asarray(g, dtype=int) for g in self.groups)
        flat = np.sort(np.concatenate(groups))
        if flat.size == 0 or not np.array_equal(flat, np.arange(flat.size)):
            raise InvalidSpec("groups must be disjoint and cover 0..p-1")
        weights = np.asarray(self.weights if self.weights is not None else [], dtype=float)
        if weights.shape != (len(groups),) or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidSpec("need one finite weight >= 0 per group")
        for g in groups:
            g.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def ridge(cls, nu: float, n: int, sigma: Optional[np.ndarray] = None) -> "PenaltySpec":
        return cls("ridge", float(nu), int(n), mu_eff=_mu_eff(nu, sigma))

    @classmethod
    def elastic_net(cls, lam: float, nu: float, n: int, sigma: Optional[np.ndarray] = None) -> "PenaltySpec":
        return cls("enet", float(nu), int(n), lam=float(lam), mu_eff=_mu_eff(nu, sigma))

    @classmethod
    def group_lasso(
        cls,
        groups: Sequence[Sequence[int]],
        weights: Sequence[float],
        nu: float,
        n: int,
        sigma: Optional[np.ndarray] = None,
    ) -> "PenaltySpec":
        return cls(
            "group",
            float(nu),
            int(n),
            groups=tuple(np.asarray(g, dtype=int) for g in groups),
            weights=np.asarray(weights, dtype=float),
            mu_eff=_mu_eff(nu, sigma),
        )

    @property
    def n_nu(self) -> float:
        return self.n_scale * self.nu

    @property
    def dim(self) -> Optional[int]:
        """Number of coordinates covered by the groups (None if not grouped)."""
        if self.family != "group":
            return None
        return int(sum(g.size for g in self.groups))

    def value(self, b) -> float:
        b = np.asarray(b, dtype=float)
        ridge = 0.5 * self.n_nu * float(b @ b)
        if self.family == "enet":
            return self.lam * float(np.sum(np.abs(b))) + ridge
        if self.family == "group":
            norms = np.array([np.linalg.norm(b[g]) for g in self.groups])
            return float(self.weights @ norms) + ridge
        return ridge

    def label(self) -> str:
        if self.family == "ridge":
            return f"ridge:{self.nu:g}"
        if self.family == "enet":
            return f"enet:{self.lam:g},{self.nu:g}"
        return f"group:{len(self.groups)}groups,{self.nu:g}"


def _mu_eff(nu: float, sigma: Optional[np.ndarray]) -> float:
    if sigma is None:
        return float(nu)
    return float(nu) / float(np.linalg.norm(sigma, 2))


def contiguous_groups(p: int, size: int) -> Tuple[np.ndarray, ...]:
    """Partition 0..p-1 into consecutive groups of `size` (last one shorter)."""
    if size < 1:
        raise InvalidSpec("group size must be >= 1")
    return tuple(np.arange(start, min(start + size, p)) for start in range(0, p, size))


@dataclass(frozen=True)
class TestFunction:
    """Test function g(a, y) used to score a prediction a against a response y."""

    __test__ = False  # keep pytest from collecting this class

    kind: str
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in TEST_FUNCTIONS:
            raise InvalidSpec(f"unknown test function {self.kind!r}")

    def __call__(self, a, y) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "sq":
            return (a - y) ** 2
        if self.kind == "abs":
            return np.abs(a - y)
        if self.kind == "dev":
            return 2.0 * (np.logaddexp(0.0, a) - y * a)
        label = (a > self.threshold).astype(float)
        return (label != y).astype(float)

    @property
    def satisfies_growth(self) -> bool:
        """Whether g is admitted by the growth condition |g(x,y)-g(x',y)| <= |x-x'|(1+|x|+|x'|)."""
        return self.kind in ("sq", "abs")

    def label(self) -> str:
        return f"mis:{self.threshold:g}" if self.kind == "mis" else self.kind


def test_function_eval(g: TestFunction, a: float, y: float) -> float:
    """Return g(a, y)."""
    _check_finite(a, y)
    return float(g(a, y))


test_function_eval.__test__ = False


@dataclass(frozen=True)
class SeedInfo:
    seed: Optional[int] = None
    model_kind: str = "external"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design x (n x p), responses y, and optional population covariance / truth."""

    x: np.ndarray
    y: np.ndarray
    sigma: Optional[np.ndarray] = None
    truth: Optional[np.ndarray] = None
    seed_info: SeedInfo = field(default_factory=SeedInfo)

    def __post_init__(self):
        x = _frozen(self.x)
        y = _frozen(self.y)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidSpec("x must be a non-empty n x p matrix")
        if y.shape != (x.shape[0],):
            raise InvalidSpec("y must have one entry per row of x")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise InvalidSpec("x and y must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.sigma is not None:
            object.__setattr__(self, "sigma", _check_sigma(self.sigma, x.shape[1]))
        if self.truth is not None:
            truth = _frozen(self.truth)
            if truth.shape != (x.shape[1],):
                raise InvalidSpec("truth must have length p")
            object.__setattr__(self, "truth", truth)
            if self.seed_info.model_kind == "single_index":
                sigma = self.sigma if self.sigma is not None else np.eye(x.shape[1])
                if abs(float(truth @ sigma @ truth) - 1.0) > 1e-8:
                    raise InvalidSpec("single-index truth must satisfy w^T Sigma w = 1")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def _check_sigma(sigma, p: int) -> np.ndarray:
    sigma = _frozen(sigma)
    if sigma.shape != (p, p):
        raise InvalidSpec("sigma must be p x p")
    scale = max(1.0, float(np.max(np.abs(sigma))))
    if float(np.max(np.abs(sigma - sigma.T))) > 1e-12 * scale:
        raise InvalidSpec("sigma must be symmetric")
    if float(np.linalg.eigvalsh(sigma)[0]) <= 0:
        raise InvalidSpec("sigma must be positive definite")
    return sigma


@dataclass(frozen=True, eq=False)
class FitResult:
    """Solution of the regularized problem together with its certificate."""

    b_hat: np.ndarray
    predictions: np.ndarray
    curvature_diag: np.ndarray
    d1: np.ndarray
    active_set: np.ndarray
    active_groups: np.ndarray
    kkt_residual: float
    kkt_scale: float
    iterations: int
    objective: float
    certified: bool
    tol: float
    lipschitz: float
    objective_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def kkt_absolute(self) -> float:
        """Residual before normalization by max(1, ||s||)."""
        return self.kkt_residual * self.kkt_scale

    def to_dict(self) -> dict:
        return {
            "b_hat": [float(v) for v in self.b_hat],
            "active_set": [int(j) for j in self.active_set],
            "active_groups": [int(k) for k in self.active_groups],
            "kkt_residual": float(self.kkt_residual),
            "iterations": int(self.iterations),
            "objective": float(self.objective),
            "certified": bool(self.certified),
            "tol": float(self.tol),
        }


def parse_loss(text: str) -> LossSpec:
    """Parse `square`, `huber[:m]` or `logistic`."""
    name, _, arg = text.strip().partition(":")
    try:
        if name == "huber":
            return LossSpec.huber(float(arg) if arg else 1.0)
        if name in ("square", "logistic") and not arg:
            return LossSpec(name)
    except ValueError as exc:
        raise InvalidSpec(f"bad loss {text!r}: {exc}") from exc
    raise InvalidSpec(f"bad loss {text!r}; expected square | huber[:m] | logistic")


def parse_penalty(text: str, n: int, p: int, sigma: Optional[np.ndarray] = None) -> PenaltySpec:
    """Parse `ridge:nu`, `enet:lambda,nu` or `group:size,lambda,nu`."""
    name, _, arg = text.strip().partition(":")
    try:
        values = [float(v) for v in arg.split(",")] if arg else []
    except ValueError as exc:
        raise InvalidSpec(f"bad penalty {text!r}: {exc}") from exc
    if name == "ridge" and len(values) == 1:
        return PenaltySpec.ridge(values[0], n, sigma)
    if name == "enet" and len(values) == 2:
        return PenaltySpec.elastic_net(values[0], values[1], n, sigma)
    if name == "group" and len(values) == 3:
        if not values[0].is_integer():
            raise InvalidSpec(f"bad penalty {text!r}: group size must be an integer")
        groups = contiguous_groups(p, int(values[0]))
        return PenaltySpec.group_lasso(groups, [values[1]] * len(groups), values[2], n, sigma)
    raise InvalidSpec(f"bad penalty {text!r}; expected ridge:nu | enet:lambda,nu | group:size,lambda,nu")


def parse_test_function(text: str) -> TestFunction:
    """Parse `sq`, `abs`, `dev` or `mis[:t]`."""
    name, _, arg = text.strip().partition(":")
    if name == "mis":
        try:
            return TestFunction("mis", float(arg) if arg else 0.0)
        except ValueError as exc:
            raise InvalidSpec(f"bad test function {text!r}") from exc
    if name in ("sq", "abs", "dev") and not arg:
        return TestFunction(name)
    raise InvalidSpec(f"bad test function {text!r}; expected sq | abs | dev | mis[:t]")
