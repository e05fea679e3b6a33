"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid problem configuration.

    ``key`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class SolverError(RuntimeError):
    """A numerical solver failed to reach its stopping criterion."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvariantViolation(AssertionError):
    """A runtime invariant check (feasibility, descent, monotonicity) failed."""
