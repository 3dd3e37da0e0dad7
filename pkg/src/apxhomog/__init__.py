"""Effective-coefficient approximation for oscillatory elliptic operators.

The package approximates the constant homogenized tensor of a
divergence-form operator by solving cell problems on growing cubes:
restrict the coefficient to a cube, repeat it periodically, solve the
corrector problems with periodic or Dirichlet conditions (optionally
with a zero-order regularization), and average.  A spectral route
cross-checks the result through the Hessian of the lowest Bloch
eigenvalue, and study helpers sweep cell radius, regularization, and
almost-periodicity modulus to measure empirical convergence rates.

Hot kernels run through a compiled extension when available and fall
back to pure numpy otherwise; ``apxhomog.kernels.BACKEND`` names the
active implementation.
"""

from .expr import ExprError, evaluate, parse, to_text
from .fields import (
    BUILTIN_NAMES,
    CoefficientField,
    FieldValidationError,
    PeriodizedField,
    builtin,
    coercivity_check,
    field_from_json,
    field_to_json,
    make_field,
    modulus_rho,
    periodize,
)
from .grid import DofMap, Grid, build_grid, make_dofmap
from .assemble import assemble, cell_average, flux_average, grad_at_quadrature
from .linalg import (
    CGInfo,
    SolverError,
    SparseSym,
    cg_solve,
    smallest_eigenpairs,
    spectral_preconditioner,
)
from .cell import (
    Corrector,
    HomTensor,
    MeshParams,
    corrector_difference,
    reference_tensor,
    solve_cell_problems,
    solve_corrector,
    tensor_energy,
    tensor_flux,
    tensor_window,
)
from .bloch import (
    BlochEigenpair,
    HessianEstimate,
    assemble_shifted,
    bloch_eigs,
    bloch_gradient,
    bloch_hessian,
    spectral_gap_scan,
)
from .study import (
    RateFit,
    StudyRecord,
    fit_rate,
    sweep_corrector_difference,
    sweep_modulus,
    sweep_regularization,
    sweep_tensor,
    unit_cell_reference,
    write_csv,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "ExprError",
    "evaluate",
    "parse",
    "to_text",
    "BUILTIN_NAMES",
    "CoefficientField",
    "FieldValidationError",
    "PeriodizedField",
    "builtin",
    "coercivity_check",
    "field_from_json",
    "field_to_json",
    "make_field",
    "modulus_rho",
    "periodize",
    "DofMap",
    "Grid",
    "build_grid",
    "make_dofmap",
    "assemble",
    "cell_average",
    "flux_average",
    "grad_at_quadrature",
    "CGInfo",
    "SolverError",
    "SparseSym",
    "cg_solve",
    "smallest_eigenpairs",
    "spectral_preconditioner",
    "Corrector",
    "HomTensor",
    "MeshParams",
    "corrector_difference",
    "reference_tensor",
    "solve_cell_problems",
    "solve_corrector",
    "tensor_energy",
    "tensor_flux",
    "tensor_window",
    "BlochEigenpair",
    "HessianEstimate",
    "assemble_shifted",
    "bloch_eigs",
    "bloch_gradient",
    "bloch_hessian",
    "spectral_gap_scan",
    "RateFit",
    "StudyRecord",
    "fit_rate",
    "sweep_corrector_difference",
    "sweep_modulus",
    "sweep_regularization",
    "sweep_tensor",
    "unit_cell_reference",
    "write_csv",
    "BACKEND",
    "__version__",
]
