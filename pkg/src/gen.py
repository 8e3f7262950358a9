"""Seeded Gaussian-design generator for the linear, robust-linear and single-index models."""

import csv
import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Optional, TextIO, Tuple

import numpy as np
from scipy import stats
from scipy.linalg import LinAlgError, cholesky
from scipy.special import expit, ndtr

from src.errors import InvalidSpec
from src.model import Dataset, SeedInfo

logger = logging.getLogger(__name__)

GENERATED_KINDS = ("linear", "robust", "single_index")
COVARIANCE_KINDS = ("identity", "ar1", "custom")
NOISE_KINDS = ("gaussian", "student_t", "cauchy")
LINKS = ("logistic", "probit")

# smallest admissible eigenvalue of a custom covariance
FACTOR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Covariance:
    """Population covariance of the rows: identity, AR1(rho) or a custom SPD matrix."""

    kind: str = "identity"
    rho: float = 0.0
    custom: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise InvalidSpec(f"unknown covariance {self.kind!r}")
        if self.kind == "ar1" and not abs(self.rho) < 1:
            raise InvalidSpec("AR1 covariance needs |rho| < 1")
        if self.kind == "custom" and self.custom is None:
            raise InvalidSpec("custom covariance needs a matrix")

    def matrix(self, p: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(p)
        if self.kind == "ar1":
            idx = np.arange(p)
            return self.rho ** np.abs(idx[:, None] - idx[None, :])
        sigma = np.asarray(self.custom, dtype=float)
        if sigma.shape != (p, p):
            raise InvalidSpec(f"custom covariance is {sigma.shape}, expected {(p, p)}")
        return sigma


@dataclass(frozen=True)
class Noise:
    """Additive noise law for the (robust) linear model."""

    kind: str = "gaussian"
    scale: float = 1.0
    df: float = 2.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidSpec(f"unknown noise {self.kind!r}")
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise InvalidSpec("noise scale must be finite and >= 0")
        if self.kind == "student_t" and not self.df > 0:
            raise InvalidSpec("Student-t degrees of freedom must be > 0")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            eps = rng.standard_normal(n)
        elif self.kind == "student_t":
            eps = stats.t.rvs(self.df, size=n, random_state=rng)
        else:
            eps = rng.standard_cauchy(n)
        return self.scale * eps


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Data model: rows x_i ~ N(0, Sigma), responses from the linear or single-index law.

    Single-index truth is rescaled on construction so that w^T Sigma w = 1.
    """

    kind: str
    n: int
    p: int
    seed: int
    truth: np.ndarray
    covariance: Covariance = field(default_factory=Covariance)
    noise: Noise = field(default_factory=Noise)
    link: str = "logistic"

    def __post_init__(self):
        if self.kind not in GENERATED_KINDS:
            raise InvalidSpec(f"unknown model kind {self.kind!r}")
        if self.n < 1 or self.p < 1:
            raise InvalidSpec("n and p must be >= 1")
        if self.link not in LINKS:
            raise InvalidSpec(f"unknown link {self.link!r}")
        if self.kind == "linear" and self.noise.kind != "gaussian":
            raise InvalidSpec("the linear Gaussian model needs Gaussian noise; use kind='robust'")
        truth = np.array(self.truth, dtype=float)
        if truth.shape != (self.p,):
            raise InvalidSpec("truth must have length p")
        sigma = self.sigma()
        if self.kind == "single_index":
            norm_sq = float(truth @ sigma @ truth)
            if norm_sq <= 0:
                raise InvalidSpec("single-index direction must be non-zero")
            truth = truth / math.sqrt(norm_sq)
        truth.setflags(write=False)
        object.__setattr__(self, "truth", truth)

    def sigma(self) -> np.ndarray:
        return self.covariance.matrix(self.p)


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    if float(np.linalg.eigvalsh(sigma)[0]) <= FACTOR_TOL:
        raise InvalidSpec("covariance is not positive definite")
    try:
        return cholesky(sigma, lower=True)
    except LinAlgError as exc:
        raise InvalidSpec("covariance is not positive definite") from exc


def draw_observations(spec: ModelSpec, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw n fresh (x, y) pairs from `spec` (n overrides spec.n)."""
    factor = _cholesky(spec.sigma())
    x = rng.standard_normal((n, spec.p)) @ factor.T
    index = x @ spec.truth
    if spec.kind == "single_index":
        link = expit if spec.link == "logistic" else ndtr
        y = (rng.uniform(size=n) <= link(index)).astype(float)
    else:
        y = index + spec.noise.draw(n, rng)
    return x, y


def generate(spec: ModelSpec) -> Dataset:
    """Draw spec.n observations with numpy.random.default_rng(spec.seed)."""
    rng = np.random.default_rng(spec.seed)
    x, y = draw_observations(spec, spec.n, rng)
    logger.debug("generated %s dataset n=%d p=%d seed=%d", spec.kind, spec.n, spec.p, spec.seed)
    return Dataset(x, y, sigma=spec.sigma(), truth=spec.truth, seed_info=SeedInfo(spec.seed, spec.kind))


def sparse_coefficients(p: int, k: int, amplitude: float, seed: int) -> np.ndarray:
    """k entries of magnitude `amplitude` at seeded positions with random signs."""
    if not 0 <= k <= p:
        raise InvalidSpec(f"need 0 <= k <= p, got k={k}, p={p}")
    rng = np.random.default_rng(seed)
    out = np.zeros(p)
    positions = rng.choice(p, size=k, replace=False)
    out[positions] = amplitude * rng.choice([-1.0, 1.0], size=k)
    return out


def replicate_seed(master: int, replicate: int) -> int:
    return int(master) ^ int(replicate)


def parse_covariance(text: str) -> Covariance:
    """Parse `identity` or `ar1:rho`."""
    name, _, arg = text.strip().partition(":")
    if name == "identity" and not arg:
        return Covariance()
    if name == "ar1":
        try:
            return Covariance("ar1", float(arg) if arg else 0.5)
        except ValueError as exc:
            raise InvalidSpec(f"bad covariance {text!r}") from exc
    raise InvalidSpec(f"bad covariance {text!r}; expected identity | ar1:rho")


def parse_noise(text: str) -> Noise:
    """Parse `gaussian[:scale]`, `student_t[:df]` or `cauchy[:scale]`."""
    name, _, arg = text.strip().partition(":")
    try:
        value = float(arg) if arg else None
        if name == "gaussian":
            return Noise("gaussian", 1.0 if value is None else value)
        if name == "student_t":
            return Noise("student_t", 1.0, 2.0 if value is None else value)
        if name == "cauchy":
            return Noise("cauchy", 1.0 if value is None else value)
    except ValueError as exc:
        raise InvalidSpec(f"bad noise {text!r}") from exc
    raise InvalidSpec(f"bad noise {text!r}; expected gaussian[:scale] | student_t[:df] | cauchy[:scale]")


def write_dataset_csv(dataset: Dataset, output: TextIO = sys.stdout):
    """Write header x_1..x_p,y then one row per observation."""
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow([f"x_{j + 1}" for j in range(dataset.p)] + ["y"])
    for row, y in zip(dataset.x, dataset.y):
        writer.writerow([format(v, ".17g") for v in row] + [format(y, ".17g")])
    output.flush()


def write_matrix_csv(matrix: np.ndarray, output: TextIO):
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow([f"s_{j + 1}" for j in range(matrix.shape[1])])
    for row in matrix:
        writer.writerow([format(v, ".17g") for v in row])
    output.flush()


def _read_numeric(path: str) -> Tuple[list, np.ndarray]:
    with open(path, "r", newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise InvalidSpec(f"{path}: expected a header and at least one row")
    header = [h.strip() for h in rows[0]]
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InvalidSpec(f"{path}: non-numeric entry ({exc})") from exc
    if body.ndim != 2 or body.shape[1] != len(header):
        raise InvalidSpec(f"{path}: ragged rows")
    return header, body


def read_dataset_csv(path: str, sigma: Optional[np.ndarray] = None) -> Dataset:
    """Read a CSV with columns x_1..x_p, y."""
    header, body = _read_numeric(path)
    if header[-1] != "y" or len(header) < 2:
        raise InvalidSpec(f"{path}: last column must be 'y' after at least one x column")
    return Dataset(body[:, :-1], body[:, -1], sigma=sigma)


def read_matrix_csv(path: str) -> np.ndarray:
    """Read a square matrix written by `write_matrix_csv`."""
    _, body = _read_numeric(path)
    if body.shape[0] != body.shape[1]:
        raise InvalidSpec(f"{path}: matrix must be square, got {body.shape}")
    return body
