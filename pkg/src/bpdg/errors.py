"""Error taxonomy shared by all bpdg modules."""


class BpdgError(Exception):
    """Base class for all library errors."""


class ShapeMismatchError(BpdgError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(BpdgError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(BpdgError, ValueError):
    """Invalid configuration value (odd width, beam < 1, bad rates, ...)."""


class CapacityError(BpdgError, ValueError):
    """A sequence does not fit the model's context window."""


class DataError(BpdgError, ValueError):
    """Corpus/schema problem: malformed record, missing field, bad label."""


class NumericError(BpdgError, ArithmeticError):
    """Non-finite value encountered during optimization."""
