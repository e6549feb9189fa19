"""Exception types shared across the package."""


class DomainError(ValueError):
    """An operation received an input outside its mathematical domain."""


class ConfigError(ValueError):
    """A configuration value is outside its declared range or schema."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(RuntimeError):
    """An iterative solver failed to converge.

    Carries the best value found so callers can inspect or salvage it.
    """

    def __init__(self, message, best=None, log=None):
        super().__init__(message)
        self.best = best
        self.log = log


class InvariantViolation(RuntimeError):
    """An internal solver invariant failed; the computation is aborted."""
