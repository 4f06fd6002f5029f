"""Exception hierarchy."""


class KacSphereError(Exception):
    """Base class for all errors raised by the package."""


class PreconditionError(KacSphereError, ValueError):
    """An input violates the hypotheses an operation relies on."""


class UnsupportedError(KacSphereError, ValueError):
    """The operation is not defined for this density (e.g. Fisher information of a jump)."""


class QuadratureError(KacSphereError, RuntimeError):
    """Adaptive quadrature did not converge."""


class DegeneracyError(KacSphereError, RuntimeError):
    """Importance weights collapsed (effective sample size too small)."""


class UnderflowError(KacSphereError, RuntimeError):
    """Too many samples had a radial integrand that vanished on the quadrature window."""


class GradientCheckError(KacSphereError, RuntimeError):
    """Analytic gradient disagreed with finite differences on audited samples."""
