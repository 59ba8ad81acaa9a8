"""Exception hierarchy. The CLI maps these onto exit codes."""


class HWLabError(Exception):
    exit_code = 1


class InputError(HWLabError, ValueError):
    """Malformed or out-of-domain input."""

    exit_code = 2


class PreconditionError(InputError):
    pass


class DegenerateError(InputError):
    pass


class InfeasibleError(InputError):
    pass


class BoundaryCaseError(HWLabError):
    """The point sits on a boundary between face regions at the tolerance scale."""

    exit_code = 3


class ConvergenceError(HWLabError):
    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConditioningError(ConvergenceError):
    pass


class TuningError(ConvergenceError):
    pass


class ProposalQualityError(ConvergenceError):
    pass


class BandWidthError(ConvergenceError):
    pass
