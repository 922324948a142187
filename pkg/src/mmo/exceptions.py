"""Exception types shared across the toolkit."""


class MmoError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(MmoError):
    """Non-finite entries, mismatched shapes, or out-of-range parameters."""


class NotPsdError(MmoError):
    """A matrix required to be positive semidefinite is significantly not."""


class UnsupportedRankError(MmoError):
    """Shaping target rank exceeds the dimensions of the design matrix."""


class InfeasibleError(MmoError):
    """A candidate point violates its power constraint beyond tolerance."""


class ConfigError(MmoError):
    """Experiment configuration is malformed (maps to CLI exit code 2)."""
