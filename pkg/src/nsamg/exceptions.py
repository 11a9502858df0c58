"""Exception hierarchy for nsamg.

Numerical failures (singular coarse operators, stagnating cycles) are kept
distinct from configuration errors so the command line can map them onto
exit codes.
"""


class NSAMGError(Exception):
    """Base class for every error raised by nsamg."""


class ConfigError(NSAMGError, ValueError):
    """Invalid user configuration or input."""


class NumericalError(NSAMGError, ArithmeticError):
    """A numerical precondition failed."""


class NonFinite(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class TooLarge(ConfigError):
    pass


class ParseError(ConfigError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnsupportedField(ConfigError):
    pass


class InvalidBeta(ConfigError):
    pass


class SingularInput(NumericalError):
    pass


class NotSpd(NumericalError):
    pass


class ZeroDiagonal(NumericalError):
    def __init__(self, index):
        super().__init__(f"zero diagonal entry at row {index}")
        self.index = index


class SingularRow(NumericalError):
    def __init__(self, row, message="interpolation denominator vanishes"):
        super().__init__(f"row {row}: {message}")
        self.row = row


class SingularCoarseOperator(NumericalError):
    def __init__(self, message="coarse operator R^T A P is singular", level=None):
        if level is not None:
            message = f"level {level}: {message}"
        super().__init__(message)
        self.level = level


class RankDeficientP(NumericalError):
    pass


class DegenerateBlock(NumericalError):
    pass


class DeterminantCondition(NumericalError):
    pass


class TrivialProjection(NumericalError):
    pass


class TooFewIterations(NumericalError):
    pass


class Stagnation(NumericalError):
    """Raised when a cycle stops contracting; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
