"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Malformed input: wrong shapes, empty grids, bad manifest keys."""


class OrderingError(ValueError):
    """Time indices supplied out of order."""


class ParameterError(ValueError):
    """A numerical parameter lies outside its admissible range."""


class FactorizationError(RuntimeError):
    """Dense covariance factorization failed even after jitter."""


class PreconditionError(ValueError):
    """A mathematical hypothesis of an operation is not met."""


class UnsupportedError(NotImplementedError):
    """Requested combination is outside what is implemented."""


class StabilityError(RuntimeError):
    """CFL budget exhausted."""


class DivergenceError(RuntimeError):
    """Non-finite values produced during time stepping."""


class CoercivityError(RuntimeError):
    """Diffusion coefficient left the ellipticity band."""


class ExperimentFailure(RuntimeError):
    """An experiment ran but missed its declared threshold."""
