"""Exception types shared across the toolkit."""


class SamkitError(Exception):
    """Base class for all toolkit errors."""


class DomainError(SamkitError):
    """Input violates a documented precondition or operating limit."""


class ConfigError(SamkitError):
    """Malformed or inconsistent configuration data."""


class NumericalError(SamkitError):
    """A computation produced NaN/Inf or otherwise lost numerical meaning."""


class DegenerateFitError(SamkitError):
    """Model fitting failed: too few points or too few inliers."""


class DegenerateGeometryError(SamkitError):
    """Geometric construction is ill-posed (collinear or coincident points)."""


class InsufficientMarkersError(SamkitError):
    """Fewer markers detected than the minimum needed for a frame."""


class ModelMismatchError(ConfigError):
    """Ensemble members do not share an identical network configuration."""


class TrainingDivergedError(NumericalError):
    """Training loss became NaN (learning rate too high or bad data)."""
