"""Exception hierarchy shared across the package."""


class SvymhdeError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(SvymhdeError, ValueError):
    """A parameter vector violates the family's domain constraints."""


class SupportError(SvymhdeError, ValueError):
    """An observation lies outside the support of the density."""


class DegenerateSampleError(SvymhdeError, ValueError):
    """The sample carries no usable spread (e.g. all values equal)."""


class EmptySampleError(SvymhdeError, RuntimeError):
    """A random-size design realized an empty sample; the caller may retry."""


class ConvergenceError(SvymhdeError, RuntimeError):
    """An iterative solver failed to converge.

    Attributes
    ----------
    last : best iterate available when the solver gave up (may be None).
    diagnostics : free-form dict with iteration counts etc.
    """

    def __init__(self, message, last=None, diagnostics=None):
        super().__init__(message)
        self.last = last
        self.diagnostics = diagnostics or {}


class DegenerateCurvatureError(SvymhdeError, RuntimeError):
    """The estimated curvature matrix is not positive definite."""

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class CalibrationError(SvymhdeError, ValueError):
    """Weight calibration could not be carried out.

    Attributes
    ----------
    clusters : offending cluster labels.
    """

    def __init__(self, message, clusters=()):
        super().__init__(message)
        self.clusters = tuple(clusters)


class InstabilityError(SvymhdeError, RuntimeError):
    """A Monte-Carlo summary was rejected as numerically unstable."""


class SchemaError(SvymhdeError, ValueError):
    """An input file (CSV, config) does not match the documented schema."""


class DesignError(SvymhdeError, ValueError):
    """An operation needs design information the sample does not carry."""
