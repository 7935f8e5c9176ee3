"""Regime-robust hybrid polytopal discretisation of the 2D Brinkman problem."""

__version__ = "0.1.0"

from .assembly import (BoundaryData, assemble, condense, condition_estimate,
                       solve, solve_problem)
from .cases import (darcy_polynomial, discontinuous, get_case, regime_blend,
                    stokes_polynomial)
from .localops import (CoefficientField, SchemeConfig, build_operator_sets,
                       friction_coefficient)
from .mesh import (PolygonalMesh, build_mesh, generate_cartesian,
                   generate_polygonal, load_mesh, save_mesh, validate)
from .verification import (CavityProblem, ConvergenceTable, ErrorReport,
                           convergence_study, energy_norm, error_report,
                           interface_flux, solve_case)

__all__ = [
    "PolygonalMesh", "build_mesh", "generate_cartesian", "generate_polygonal",
    "load_mesh", "save_mesh", "validate",
    "CoefficientField", "SchemeConfig", "build_operator_sets",
    "friction_coefficient",
    "BoundaryData", "assemble", "condense", "solve", "solve_problem",
    "condition_estimate",
    "get_case", "regime_blend", "discontinuous", "stokes_polynomial",
    "darcy_polynomial",
    "CavityProblem", "ConvergenceTable", "ErrorReport", "convergence_study",
    "energy_norm", "error_report", "interface_flux", "solve_case",
    "__version__",
]
