"""Exception hierarchy and warnings shared across the package."""


class LoclabError(Exception):
    """Base class for all package errors."""


class SingularCovarianceError(LoclabError):
    """Covariance is numerically singular; whitening is not possible."""


class AffineSpanError(LoclabError):
    """Sampled atoms do not affinely span the ambient space."""


class NoConvergenceError(LoclabError):
    """Damped Newton did not reach tolerance within the iteration cap."""


class InteriorPointError(LoclabError):
    """Target point is not strictly inside the support hull."""


class DensityVanishingError(LoclabError):
    """1D density falls below the positivity floor inside its interval."""


class StepSizeError(LoclabError):
    """dt * ||A|| is too large for the positivity-respecting update."""


class NonFiniteFlowError(LoclabError):
    """Flow state left the floating range (dt too large for the support radius)."""


class HypothesisViolatedError(LoclabError):
    """Input sequences do not satisfy the recursion hypothesis; input rejected."""


class BumpConstructionError(LoclabError):
    """Bridge construction failed a contract probe."""


class ConfigError(LoclabError):
    """Experiment configuration is malformed."""


class DegenerateTiltWarning(UserWarning):
    """Effective sample size of a tilted atom cloud fell below the floor."""
