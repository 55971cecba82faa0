"""Exception types raised across the package."""


class CP1GreenError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CP1GreenError, ValueError):
    """Invalid grid, set, or run configuration."""


class DomainError(CP1GreenError, ValueError):
    """A function was evaluated outside of its domain."""


class InvalidWeightError(CP1GreenError, ValueError):
    """The weight produced NaN or is otherwise unusable."""


class InvalidGaugeError(CP1GreenError, ValueError):
    """The gauge makes the modified form negative somewhere."""


class PreconditionError(CP1GreenError, ValueError):
    """An input failed a required certificate (e.g. discrete omega-psh)."""


class SolverError(CP1GreenError, RuntimeError):
    """A numerical method failed to produce a usable answer."""


class RootFindingError(SolverError):
    """Simultaneous root iteration did not converge."""
