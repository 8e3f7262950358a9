"""Exception hierarchy shared by the library and the CLI."""

from typing import Optional


class AloError(Exception):
    """Base class for every error raised by this package."""


class InvalidSpec(AloError, ValueError):
    """A type or config parameter violates its stated invariant."""


class DomainError(AloError, ValueError):
    """Non-finite input handed to an evaluator."""


class MaxIterExceeded(AloError):
    """Solver ran out of iterations; `result` holds the best (non-certified) iterate."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class NonFiniteObjective(AloError, FloatingPointError):
    """Objective became NaN or infinite during a solve."""


class SingularSystem(AloError):
    """Restricted curvature system is not numerically positive definite."""


class WrongLoss(AloError, ValueError):
    """Operation requires the square loss."""


class DegenerateLeverage(AloError):
    """1 - D_ii x_i^T A x_i fell below the safety threshold."""

    def __init__(self, message: str, index: Optional[int] = None, denominator: float = 0.0):
        super().__init__(message)
        self.index = index
        self.denominator = denominator


class DegenerateDenominator(AloError):
    """tr[D - D X A X^T D] is too small for the df ratio."""

    def __init__(self, message: str, denominator: float = 0.0):
        super().__init__(message)
        self.denominator = denominator


class SupportChanged(AloError):
    """Active set differs between the two finite-difference probes."""


class LeaveOneOutFailure(AloError):
    """A leave-one-out refit failed; `index` names the left-out observation."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"leave-one-out refit {index} failed: {cause}")
        self.index = index
        self.cause = cause


class ExperimentFailed(AloError):
    """More than the allowed share of replicates failed."""

    def __init__(self, message: str, summary: Optional[dict] = None):
        super().__init__(message)
        self.summary = summary or {}
