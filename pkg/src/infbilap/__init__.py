"""Second-order L-infinity variational problems and the infinity-Bilaplacian.

Exact 1D absolute minimisers and critical-point solutions, p-Biharmonic
solutions, residuals of the third-order operator, and p-Bilaplacian solvers
in 1D and 2D with continuation in p.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    TEST1,
    ConvergenceError,
    Custom1D,
    DomainError,
    EnergySpec,
    FullHessianSq,
    HermiteData1D,
    PiecewiseQuadratic,
    ProjectionSq,
    RejectedDataError,
    ScalarField,
    SolveReport,
    cubic_hermite,
    eval_piecewise_quadratic,
    hermite_defect,
    power_energy,
)
from .exact1d import (  # noqa: E402
    absolute_minimiser,
    critical_point_solution,
    feasible_level,
    p_exact_solution,
)
