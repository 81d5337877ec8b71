"""Exception hierarchy.

Errors fall into three families so the CLI can map them to exit codes:
``DataError`` (bad inputs, exit 3), ``NumericalError`` (degenerate or
non-finite arithmetic, exit 4) and plain ``ValueError`` subclasses for
invalid configuration.
"""


class RIError(Exception):
    """Base class for all package errors."""


class DataError(RIError, ValueError):
    pass


class NumericalError(RIError, ArithmeticError):
    pass


class ConfigError(RIError, ValueError):
    pass


# tensor core
class DegenerateVector(NumericalError):
    pass


class DimensionMismatch(DataError):
    pass


class NonFiniteEvaluation(NumericalError):
    pass


# recognizability
class IndexOutOfRange(DataError, IndexError):
    pass


class InvalidEpsilon(ConfigError):
    pass


class EmptyUISet(DataError):
    pass


class DegenerateCenter(NumericalError):
    pass


class InsufficientVariance(NumericalError):
    pass


class InsufficientData(DataError):
    pass


class ZeroVariance(NumericalError):
    pass


# attention
class ShapeMismatch(DataError):
    pass


# synthetic data
class InfeasibleSeparation(ConfigError):
    pass


# trainer
class DivergenceDetected(NumericalError):
    def __init__(self, message, step=None, epoch=None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch


# evaluation
class UnmatedProbePresent(DataError):
    pass


class InsufficientPairs(DataError):
    pass


class NoUnmatedProbes(DataError):
    pass


class EmptyAfterRejection(DataError):
    pass


class CSVFormatError(DataError):
    def __init__(self, path, line, column, message):
        super().__init__(f"{path}:{line}: column {column!r}: {message}")
        self.path = path
        self.line = line
        self.column = column
