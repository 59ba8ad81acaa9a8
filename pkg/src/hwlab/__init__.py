"""Numerical laboratory for Hadwiger-Wills variables of convex bodies.

Intrinsic volumes, samplers for the density ``exp(-pi dist(x, K)^2) / W(K)``,
Stein-bound estimators and Gaussian-approximation experiments.
"""

__version__ = "0.1.0"

from hwlab.errors import (  # noqa: F401
    HWLabError,
    InputError,
    ConvergenceError,
    InfeasibleError,
    BoundaryCaseError,
    DegenerateError,
    PreconditionError,
    ConditioningError,
    TuningError,
    ProposalQualityError,
    BandWidthError,
)
from hwlab.rng import SeedSpec  # noqa: F401
from hwlab.bodies import ConvexBody, ProjectionResult  # noqa: F401
from hwlab.intrinsic import IntrinsicProfile, DiscreteLaw, SurfaceLaw, MomentSummary  # noqa: F401
