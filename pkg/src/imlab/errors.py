"""Exception types shared across the package."""


class ImlabError(Exception):
    """Base class for all package-specific failures."""


class DegenerateMatrixError(ImlabError):
    """Matrix field lost invertibility on the grid (det below threshold)."""


class NoContractionError(ImlabError):
    """Fixed-point iteration failed to contract (projection cut K too small)."""


class ConsistencyError(ImlabError):
    """Two independent evaluation routes disagree beyond tolerance."""


class IntegrationBlowupError(ImlabError):
    """Time integration produced NaN/Inf or left the representable range."""


class InfeasibleResolutionError(ImlabError):
    """No admissible parameter found within the resolution bounds."""


class ContractionViolationError(ImlabError):
    """Measured contraction factor >= 1 where the gap check promised < 1."""


class SolverStagnationError(ImlabError):
    """Newton iteration stagnated (shift constant likely too small)."""


class ConfigurationError(ImlabError):
    """Invalid or inconsistent experiment configuration."""
