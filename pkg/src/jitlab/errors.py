"""Exception types shared across the package."""


class JitError(Exception):
    """Base class for all errors raised by jitlab."""


class DimensionError(JitError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(JitError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ContractError(JitError, RuntimeError):
    """A call violates a documented precondition."""


class ConfigError(JitError, ValueError):
    """Invalid configuration, spec or dataset for the requested action."""


class FormatError(JitError, ValueError):
    """A file does not match the expected on-disk layout."""
