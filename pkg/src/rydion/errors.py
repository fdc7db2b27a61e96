"""Exception hierarchy shared by every module."""


class RydionError(Exception):
    """Base class. ``exit_code`` is what the command line returns."""

    exit_code = 3


class ConfigError(RydionError, ValueError):
    exit_code = 2


class DataFileMissing(RydionError, FileNotFoundError):
    exit_code = 2


class NumericalError(RydionError, ArithmeticError):
    pass


class Unstable(NumericalError):
    pass


class Singular(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class CollapsedPair(NumericalError):
    pass


class NotAtEquilibrium(NumericalError):
    pass


class ImaginaryMode(NumericalError):
    def __init__(self, message, eigenvalue=None, eigenvector=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.eigenvector = eigenvector


class StepFailure(NumericalError):
    pass


class TruncationTooSmall(NumericalError):
    pass


class NoFeasiblePulse(NumericalError):
    pass


class UnknownProperty(RydionError, KeyError):
    exit_code = 2


class NotApplicable(RydionError, ValueError):
    exit_code = 2


class NoLowerState(RydionError, ValueError):
    exit_code = 2


class EliminationInvalid(RydionError, ValueError):
    pass


class NotCounterIntuitive(RydionError, ValueError):
    exit_code = 2


class CoincidentCharges(NumericalError):
    pass


class ExpansionInvalid(RydionError, ValueError):
    pass


class TooLarge(RydionError, ValueError):
    exit_code = 2


class ResonantMode(NumericalError):
    pass


class NotImpulsive(UserWarning):
    """Pulse is not short compared to the slowest mode period."""
