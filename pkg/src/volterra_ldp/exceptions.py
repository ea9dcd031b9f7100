"""Exception hierarchy shared by all modules."""


class VolterraError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(VolterraError, ValueError):
    """Invalid user input or configuration."""


class UnsupportedParameterError(ValidationError):
    """A parameter is outside the range a model or formula supports."""


class UnsupportedExampleError(ValidationError):
    """No closed form is available for the requested model/example pair."""


class NumericalError(VolterraError, ArithmeticError):
    """A numerical routine failed to deliver a trustworthy result."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance."""


class NotPositiveSemidefiniteError(NumericalError):
    """A matrix could not be factorized even after the largest jitter."""


class NearSingularGramError(NumericalError):
    """The conditioning Gram matrix is numerically singular."""


class DegenerateVarianceError(NumericalError):
    """A variance that must be positive came out non-positive."""
