"""Exception types shared across the library."""


class HjrobustError(Exception):
    """Base class for all hjrobust errors."""


# --- panel ingestion ---------------------------------------------------------

class MalformedCsv(HjrobustError):
    """CSV file violates the panel format (bad cell, row length, duplicate period)."""


class EmptyPanel(HjrobustError):
    """File or selection contains no usable data rows/columns."""


class NoOverlap(HjrobustError):
    """Return and factor panels share no common periods."""


class DimensionMismatch(HjrobustError):
    """Input shapes are inconsistent with each other."""


# --- numerical linear algebra ------------------------------------------------

class NotPositiveDefinite(HjrobustError):
    """A matrix required to be positive definite is not (within tolerance)."""


class NonPositiveDefiniteW(NotPositiveDefinite):
    """The eigenweight sandwich requires a positive definite weighting matrix."""


class SingularWeighting(NotPositiveDefinite):
    """The second-moment weighting matrix of returns is singular."""


class SingularErrorCovariance(NotPositiveDefinite):
    """The pricing-error covariance is singular; the AR quadratic form is undefined."""


class SingularTestingMoment(NotPositiveDefinite):
    """The testing-portfolio second moment is singular."""


class RankDeficientQ(HjrobustError):
    """Projector basis is rank deficient."""


class RankDeficientMoments(HjrobustError):
    """The return/factor cross-moment matrix is rank deficient."""


class RankFailure(HjrobustError):
    """A regression design matrix is rank deficient."""


class AccuracyNotReached(HjrobustError):
    """Distribution quadrature failed to reach the requested accuracy."""


class WeakInstrumentSingularity(HjrobustError):
    """Projected cross-product in the split-sample IV step is numerically singular."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class ZeroConstantCoefficient(HjrobustError):
    """The SDF constant coefficient is (numerically) zero; the premia transform is undefined."""


class InvalidCalibration(HjrobustError):
    """A simulation calibration bundle is malformed or not positive semidefinite."""
