"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes, so the class name doubles as the
machine-readable error kind printed on stderr.
"""


class RobustSIError(Exception):
    """Base class for all library errors."""

    exit_code = 4


class InputError(RobustSIError):
    exit_code = 3


class DimensionMismatch(InputError, ValueError):
    pass


class ParseError(InputError):
    pass


class MissingColumn(InputError):
    pass


class OutOfWindow(InputError, ValueError):
    pass


class WindowTooSmall(InputError, ValueError):
    pass


class NumericalFailure(RobustSIError, ArithmeticError):
    pass


class ZeroMassRegion(NumericalFailure):
    pass


class NonMonotonePivot(NumericalFailure):
    pass


class Unbounded(NumericalFailure):
    pass


class CycleDetected(NumericalFailure):
    pass


class EmptyRegion(NumericalFailure):
    pass


class CallbackInconsistent(NumericalFailure):
    pass


class NonUniqueActiveBlock(NumericalFailure):
    pass


class MaxIterations(NumericalFailure):
    pass


class DegenerateDirection(NumericalFailure):
    pass


class TieAtBoundary(RobustSIError):
    pass


class DetectionStarvation(RobustSIError):
    pass


class NoOutliersDetected(RobustSIError):
    exit_code = 2


class RankDeficiencyWarning(UserWarning):
    """Design matrix lacks full column rank; the robust fit may not be unique."""
