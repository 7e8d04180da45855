"""Exception and warning types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class InvalidConfigError(ValueError):
    """Raised for solver or experiment settings that cannot be honoured."""


class ConsistencyError(RuntimeError):
    """Raised when a computed certificate fails its own verification."""


class ModelError(RuntimeError):
    """Raised when the problem data contradict a modelling assumption
    (e.g. an infeasible level set detected by the parametric solver)."""


class ConvergenceWarning(UserWarning):
    """An iterative routine stopped at its iteration cap."""
