"""Exception taxonomy shared across the package.

Callers can distinguish contract violations (caller bugs), shape mismatches,
numeric failures (NaN/Inf, non-convergence), configuration problems and file
format errors without string matching.
"""


class LatentGuardError(Exception):
    """Base class for all package errors."""


class ContractError(LatentGuardError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Operand dimensions are incompatible with the operation."""


class NumericError(LatentGuardError):
    """Non-finite values or a numeric routine failed to converge."""


class ConfigError(LatentGuardError):
    """Invalid or inconsistent configuration."""


class ParseError(LatentGuardError):
    """A file does not conform to its declared binary/text format."""
