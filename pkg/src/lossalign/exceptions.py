"""Exception hierarchy shared across the package."""


class LossalignError(Exception):
    """Base class for all package errors."""


class ShapeError(LossalignError):
    """Array dimensions do not match what the operation requires."""


class InputError(LossalignError):
    """Input values violate a precondition (non-finite, out of range, ...)."""


class UsageError(LossalignError):
    """The call itself is malformed (empty input, non-scalar loss, bad k)."""


class CheckpointError(LossalignError):
    """A checkpoint file is missing, corrupt, or layout-incompatible."""


class ConfigError(LossalignError):
    """A run configuration failed validation."""
