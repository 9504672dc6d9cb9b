"""Exception hierarchy.

The CLI maps these onto exit codes: validation problems to 2, numerical
failures to 3.
"""


class FingerError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FingerError, ValueError):
    """Bad input: invalid parameters, malformed data, unknown config keys."""


class ConfigError(ValidationError):
    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class DataError(ValidationError):
    """Corpus problems (too few rows, corrupt CSV lines, degenerate inputs)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(FingerError, ArithmeticError):
    """A computation left its domain of validity."""


class DegenerateGeometryError(NumericalError):
    pass


class InfeasibleGeometryError(NumericalError):
    def __init__(self, message, equation=None):
        self.equation = equation
        super().__init__(message)


class MuscleSaturationError(NumericalError):
    pass


class IllConditionedGramError(NumericalError):
    pass


class UndefinedMetricError(NumericalError):
    pass


class UnstableIntegrationError(NumericalError):
    pass


class SimulationDivergedError(NumericalError):
    def __init__(self, message, step=None, cell=None):
        self.step = step
        self.cell = cell
        super().__init__(message)
