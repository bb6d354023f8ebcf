"""Exception hierarchy shared by every naolab module."""


class NaoError(Exception):
    """Base class for all library errors."""


class DimensionError(NaoError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(NaoError, ArithmeticError):
    """A computation produced NaN/Inf or an ill-defined quantity."""


class StateError(NaoError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class ConfigurationError(NaoError, ValueError):
    """Invalid configuration or parameter combination."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SpecificationError(NaoError, ValueError):
    """Unknown kernel family / index combination."""


class QuadratureError(NaoError, ArithmeticError):
    """Adaptive quadrature exhausted its subdivision budget."""

    def __init__(self, message, estimate=None, error=None):
        self.estimate = estimate
        self.error = error
        super().__init__(message)


class SolverError(NaoError, ArithmeticError):
    """A linear system could not be solved."""

    def __init__(self, message, condition=None):
        self.condition = condition
        super().__init__(message)
