"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid shapes, parameters or configuration values."""


class NumericError(FloatingPointError):
    """A computation produced a non-finite value."""


class GenerationError(RuntimeError):
    """A synthetic world could not be generated."""


class ContractViolation(RuntimeError):
    """A strategy tried to read data it is not permitted to touch."""


class PlanningError(ValueError):
    """No path exists between the requested vertices."""


class ParseError(ValueError):
    """Malformed input file."""
