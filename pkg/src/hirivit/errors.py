"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible; message names the offending axes."""


class ResolutionError(ValueError):
    """A spatial extent cannot be processed (underflow, indivisibility)."""


class ConfigError(ValueError):
    """Invalid model, optimizer, or CLI configuration."""
