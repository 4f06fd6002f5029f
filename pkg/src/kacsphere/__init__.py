"""Rescaled measures on Kac's sphere and numerical checks of their chaoticity."""

from kacsphere.estimates import Ensemble, EstimateWithError
from kacsphere.errors import (
    DegeneracyError,
    GradientCheckError,
    KacSphereError,
    PreconditionError,
    QuadratureError,
    UnderflowError,
    UnsupportedError,
)

__all__ = [
    "DegeneracyError",
    "Ensemble",
    "EstimateWithError",
    "GradientCheckError",
    "KacSphereError",
    "PreconditionError",
    "QuadratureError",
    "UnderflowError",
    "UnsupportedError",
]

__version__ = "0.1.0"
