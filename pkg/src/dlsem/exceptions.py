"""Exception hierarchy shared by the estimation pipeline."""


class DlsemError(Exception):
    """Base class for all package errors."""


class InvalidDataError(DlsemError, ValueError):
    """Input data cannot be used (too few rows, nonpositive variances, singular S)."""


class DimensionError(DlsemError, ValueError):
    """Array shapes are inconsistent with each other."""


class NotPSDError(DlsemError, ValueError):
    """A matrix required to be positive semidefinite is not."""


class SingularWeightError(DlsemError, ArithmeticError):
    """A weight matrix blend could not be inverted safely."""

    def __init__(self, message, rcond=None):
        super().__init__(message)
        self.rcond = rcond


class SingularModelError(DlsemError, ArithmeticError):
    """The model-implied covariance matrix is singular."""


class SingularInformationError(DlsemError, ArithmeticError):
    """sigma_dot' W sigma_dot is not invertible."""


class DegenerateStatisticError(DlsemError, ArithmeticError):
    """tr(U Gamma) is not positive, so the scaled statistics are undefined."""


class UndefinedMetricError(DlsemError, ValueError):
    """A Monte Carlo summary has no valid replications to summarize."""


class CannotTuneError(DlsemError, RuntimeError):
    """The ML fit used as the bootstrap population did not converge."""


class SpecError(DlsemError, ValueError):
    """A model or study specification is malformed."""
