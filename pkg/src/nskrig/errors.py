"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the CLI uses when it surfaces.
"""


class NSKrigError(Exception):
    code = "ERROR"
    exit_status = 1


class InputError(NSKrigError, ValueError):
    code = "INPUT_ERROR"
    exit_status = 2


class ParameterDomainError(InputError):
    code = "PARAMETER_DOMAIN"


class ShapeError(InputError):
    code = "SHAPE_ERROR"


class InsufficientDataError(InputError):
    code = "INSUFFICIENT_DATA"


class ConditioningError(NSKrigError, ArithmeticError):
    code = "CONDITIONING_ERROR"
    exit_status = 3

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ConvergenceError(NSKrigError, RuntimeError):
    code = "CONVERGENCE_FAILURE"
    exit_status = 4


class InitializationError(ConvergenceError):
    code = "INITIALIZATION_ERROR"
