"""Exception types shared across the package."""


class BalgraphError(Exception):
    """Base class for all package-specific errors."""


class IsolatedNode(BalgraphError):
    """A node's absolute degree vanished where a normalization denominator is needed."""


class NotBalanced(BalgraphError):
    """A polarity vector is inconsistent with the edge signs of a supposedly balanced graph."""


class MissingDistance(BalgraphError):
    """An edge in the topology has no distance entry."""


class TooShort(BalgraphError):
    """A time series is too short for the requested trimming and chunking."""


class NoConvergence(BalgraphError):
    """The symmetric eigensolver failed to converge."""


class DivergedLoss(BalgraphError):
    """Training loss became non-finite."""


class ConfigError(BalgraphError):
    """A run configuration failed schema validation."""
