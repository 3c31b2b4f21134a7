"""forchflow: simulation and numerical certification of rotating generalized
Forchheimer flows in heterogeneous porous media.

The package solves the degenerate parabolic pseudo-pressure equation obtained
from a rotated power-law momentum balance, and numerically certifies the a
priori estimates that govern it: the two-sided flux bounds, the weighted
L^alpha differential inequality and its decay envelope, and the iterative
L^infinity bound, together with the elementary and composite functional
inequalities they rest on.
"""

__version__ = "0.1.0"

from .constitutive import FlowModel, FluidEOS, ForchheimerLaw, RotationGravity
from .expressions import ExpressionError, FieldExpr
from .geometry import BoundaryForcing, Grid, PorousDomain

__all__ = [
    "FlowModel",
    "FluidEOS",
    "ForchheimerLaw",
    "RotationGravity",
    "ExpressionError",
    "FieldExpr",
    "BoundaryForcing",
    "Grid",
    "PorousDomain",
    "__version__",
]
