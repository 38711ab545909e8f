"""Exception types shared across the package."""


class RisBeamError(Exception):
    """Base class for all package errors."""


class ConfigError(RisBeamError, ValueError):
    """A configuration value violates a documented invariant."""


class InvalidArgument(RisBeamError, ValueError):
    """An argument has the wrong shape, range or value."""


class RankDeficiencyError(RisBeamError, ArithmeticError):
    """The equivalent channel Gram matrix is singular or ill-conditioned.

    ``condition`` carries the estimate that triggered the error (``inf`` when
    the matrix is exactly singular).
    """

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class BudgetExceeded(RisBeamError):
    """A search would visit more candidates than the configured budget."""

    def __init__(self, count: int, budget: int):
        super().__init__(
            f"search space has {count} candidates, budget is {budget}"
        )
        self.count = count
        self.budget = budget


class FormatError(RisBeamError):
    """A dataset or checkpoint file is malformed."""
