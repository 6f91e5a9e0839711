"""Exception types raised across the package."""


class RdgpError(Exception):
    pass


class UnsupportedDimensionError(RdgpError, ValueError):
    """Operation only defined for a particular sphere dimension."""


class EmptyLatticeError(RdgpError, ValueError):
    pass


class InvalidCountError(RdgpError, ValueError):
    pass


class DomainError(RdgpError, ValueError):
    """Argument outside the domain of a special function."""


class PoleSingularityError(RdgpError, ValueError):
    """Coordinate frame requested too close to a pole."""


class NotSampleableError(RdgpError):
    """Prior has no explicit feature expansion for pathwise sampling."""


class LinearAlgebraError(RdgpError):
    """Factorisation failed even after jitter escalation."""


class NumericalError(RdgpError):
    pass


class TrainingError(RdgpError):
    """Non-finite objective or gradient during optimisation.

    ``trace`` holds the objective values recorded before the failure.
    """

    def __init__(self, message, trace=None, parameter=None):
        super().__init__(message)
        self.trace = list(trace or [])
        self.parameter = parameter


class ConfigError(RdgpError, ValueError):
    pass


class CsvFormatError(RdgpError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
