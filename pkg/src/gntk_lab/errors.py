"""Exception types raised across the lab."""


class GntkLabError(Exception):
    """Base class for every error the package raises on purpose."""


class DomainError(GntkLabError, ValueError):
    """An input lies outside the domain of an operation."""


class GenerationError(GntkLabError):
    """Synthetic data generation ran out of attempts."""


class TrainingError(GntkLabError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class SingularKernelError(GntkLabError):
    """A kernel matrix is too close to singular to solve against."""

    def __init__(self, message, eigenvalue):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConvergenceError(GntkLabError):
    """An iterative eigen-solver hit its iteration cap."""

    def __init__(self, message, best_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate


class ConfigurationError(GntkLabError, ValueError):
    """An experiment or solver was configured inconsistently."""


class SchemaError(GntkLabError, ValueError):
    """A dataset or checkpoint file does not follow its JSON schema."""


class InternalConsistencyError(GntkLabError):
    """A numerical invariant broke mid-computation; indicates a bug."""
