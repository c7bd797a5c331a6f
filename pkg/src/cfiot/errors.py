"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class SolverError(RuntimeError):
    """An iterative solver failed to converge or produced a non-finite value."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
