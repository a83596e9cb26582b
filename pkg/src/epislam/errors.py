"""Exception taxonomy shared across the package."""


class EpislamError(Exception):
    """Base class for package errors."""


class ConfigurationError(EpislamError):
    """Invalid configuration value (non-SPD covariance, bad engine/reward pairing)."""


class InputError(EpislamError):
    """Inconsistent or malformed runtime inputs (e.g. unpaired measurements)."""


class InsufficientDataError(EpislamError):
    """Too few samples to estimate the requested quantity."""


class NumericDomainError(EpislamError):
    """Value left the numerical domain of an operation (e.g. log of zero)."""


class GaugeError(EpislamError):
    """Information matrix is singular; the graph is not pinned by priors."""


class OptimizationError(EpislamError):
    """Nonlinear least-squares failed to make progress."""
