"""Exception classes shared across the package.

Each class carries an ``exit_code`` used by the command-line front end.
"""


class StochMFError(Exception):
    exit_code = 1


class ConfigError(StochMFError, ValueError):
    exit_code = 2


class MalformedTensor(StochMFError, ValueError):
    exit_code = 3


class UnsupportedComplexInteraction(StochMFError, ValueError):
    exit_code = 3


class DimensionGuardExceeded(StochMFError):
    exit_code = 4


class RankLoss(StochMFError, ArithmeticError):
    exit_code = 5


class NearSingularOverlap(StochMFError, ArithmeticError):
    exit_code = 6


class ConvergenceError(StochMFError, ArithmeticError):
    exit_code = 7


class PositivityLoss(StochMFError, ArithmeticError):
    exit_code = 8


class TooManyAborts(StochMFError):
    exit_code = 9


class ValidationFailed(StochMFError):
    exit_code = 10
