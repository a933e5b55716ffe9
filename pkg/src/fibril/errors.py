"""Exception types raised by the engine."""


class FibrilError(Exception):
    """Base class for all engine errors."""


class NonPositiveDefiniteMetric(FibrilError):
    """A metric block failed its Cholesky factorization."""


class ActionNotIsometric(FibrilError):
    """The group action does not preserve a metric within tolerance."""


class SingularFaddeevPopov(FibrilError):
    """Faddeev-Popov matrix is (numerically) singular: gauge surface not transversal."""


class NonPositiveOrbitMetric(FibrilError):
    """The orbit metric d failed its Cholesky factorization."""


class ChartExit(FibrilError):
    """A state left the declared chart domain of the model."""


class SurfaceDrift(FibrilError):
    """Newton re-projection onto the gauge surface did not converge."""


class MissingIncrements(FibrilError):
    """A trajectory carries no recorded Wiener increments."""


class InsufficientSamples(FibrilError):
    """Kernel-density effective sample count below the required minimum."""


class PathFailureThreshold(FibrilError):
    """More paths failed than the run tolerates."""


class ConfigError(FibrilError):
    """Invalid run configuration."""
