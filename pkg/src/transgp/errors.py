"""Exception hierarchy shared by all modules."""


class TransGPError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(TransGPError):
    """Failures of a numerical routine (CLI exit code 2)."""


class NotPositiveDefinite(NumericalError):
    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class DimensionMismatch(TransGPError, ValueError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class InvalidPerturbation(TransGPError, ValueError):
    pass


class ParamOutOfBox(TransGPError, ValueError):
    pass


class UnsupportedOrder(TransGPError, ValueError):
    pass


class NoVarianceSplit(TransGPError):
    pass


class CenteringMismatch(TransGPError, ValueError):
    pass


class IndexOutOfRange(TransGPError, IndexError):
    pass


class SizeCapExceeded(TransGPError):
    """Raised when an O(n^4) analytic evaluation is requested above the cap.

    Use a ``monte_carlo`` population instead.
    """


class MehlerInversionUnavailable(TransGPError):
    pass


class AllStartsFailed(NumericalError):
    pass


class EmptySample(TransGPError, ValueError):
    pass


class DegenerateScale(NumericalError):
    pass


class AllFiltered(TransGPError):
    pass


class ConfigError(TransGPError, ValueError):
    pass


class ExperimentFailed(NumericalError):
    pass
