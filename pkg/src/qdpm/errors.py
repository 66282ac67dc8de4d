"""Exception types shared across the package.

The CLI exit-code contract maps onto these: ConfigError -> 2,
SolverConvergenceError -> 3, MissingArtifactError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration, malformed input, or a violated precondition."""


class SolverConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance within the iteration budget.

    The partial result, when one exists, is attached so callers can inspect it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class MissingArtifactError(RuntimeError):
    """A required artifact (e.g. a solved policy file) is absent."""
