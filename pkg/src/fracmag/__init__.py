"""Forward and inverse solvers for semilinear magnetic fractional Schrodinger equations."""

from .errors import (
    AccuracyWarning,
    BarrierFailure,
    BasisMismatch,
    ContractionFailure,
    DomainError,
    IllConditionedWarning,
    NumericalFailure,
    NumericalOverflow,
    PositivityFailure,
    RadiusExceeded,
    SingularSystem,
    SpecViolation,
    StencilTooCoarse,
)
from .grid import DomainSpec, Grid, Region, build_grid, bump, standard_domain
from .nonlocal_ops import assemble_frac_laplacian, assemble_magnetic, frac_constant
from .potentials import MagneticPotential, Nonlinearity, check_admissibility, cubic_preset
from .forward import ForwardModel, LinearProblem, SolverOptions, solve_cascade, solve_linear, solve_nonlinear
from .dn_map import DnData, dn_derivatives, make_basis
from .inversion import InversionOptions, reconstruct_all

__version__ = "0.1.0"

__all__ = [
    "AccuracyWarning",
    "BarrierFailure",
    "BasisMismatch",
    "ContractionFailure",
    "DomainError",
    "IllConditionedWarning",
    "NumericalFailure",
    "NumericalOverflow",
    "PositivityFailure",
    "RadiusExceeded",
    "SingularSystem",
    "SpecViolation",
    "StencilTooCoarse",
    "DomainSpec",
    "Grid",
    "Region",
    "build_grid",
    "bump",
    "standard_domain",
    "assemble_frac_laplacian",
    "assemble_magnetic",
    "frac_constant",
    "MagneticPotential",
    "Nonlinearity",
    "check_admissibility",
    "cubic_preset",
    "ForwardModel",
    "LinearProblem",
    "SolverOptions",
    "solve_cascade",
    "solve_linear",
    "solve_nonlinear",
    "DnData",
    "dn_derivatives",
    "make_basis",
    "InversionOptions",
    "reconstruct_all",
]
