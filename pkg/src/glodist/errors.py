"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class MissingClassError(InvalidInputError):
    """A class that must appear in a weighting pool has zero examples."""


class ConfigError(ValueError):
    """A configuration value or combination is rejected; message carries the key path."""


class ContractViolation(RuntimeError):
    """An API was used out of order (e.g. backward without a matching forward)."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where the pipeline requires finite numbers."""
