"""Exception types shared across the package."""


class PruneLabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PruneLabError):
    """Operands have incompatible or degenerate shapes."""


class NumericError(PruneLabError):
    """NaN/Inf encountered, or a numeric step could not proceed."""


class ArchitectureError(PruneLabError):
    """Architecture string failed to parse or validate.

    Carries the offending token and its position so error messages can
    point at the exact spot in the string.
    """

    def __init__(self, message, token_index=None, token=None):
        if token_index is not None:
            message = f"token {token_index} ({token!r}): {message}"
        super().__init__(message)
        self.token_index = token_index
        self.token = token


class DataError(PruneLabError):
    """Dataset file is malformed, truncated, or inconsistent."""


class CheckpointError(PruneLabError):
    """Checkpoint file is unreadable, corrupt, or version-incompatible."""


class MaskError(PruneLabError):
    """Pruning mask is invalid or does not match the network."""


class ConfigError(PruneLabError):
    """Experiment configuration is invalid."""
