"""Exception types raised across the package."""


class AdvDiverseError(Exception):
    """Base class for all package errors."""


class DimensionError(AdvDiverseError, ValueError):
    pass


class ConfigError(AdvDiverseError, ValueError):
    pass


class GraphError(AdvDiverseError):
    """Differentiation target is not reachable from the output."""


class DegenerateDirectionError(AdvDiverseError, ValueError):
    """A direction vector has (near) zero norm."""


class ConditionError(AdvDiverseError, ValueError):
    """Conditions do not match a model's schema."""


class NumericError(AdvDiverseError, ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(AdvDiverseError, ValueError):
    """Malformed or unsupported image file."""
