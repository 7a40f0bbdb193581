"""Exception types shared across the package."""


class AlignmentError(ValueError):
    """Two structures that must share shape or identifiers do not."""


class ConfigError(ValueError):
    """A configuration value is out of range, unknown, or contradictory."""


class NonFiniteError(RuntimeError):
    """A parameter, gradient, or input contains NaN or infinity."""
