"""Complexified nonlinear Poisson-Boltzmann toolkit.

Picard iteration with explicit smallness/contraction certificates, plus
executable non-uniqueness constructions (radial ODE and a bifurcation
branch).
"""

from .coefficients import CoefficientSet
from .constants import ConstantsReport, build_report, lambda1_estimate
from .errors import (
    BranchRangeError,
    ConfigError,
    ConvergenceError,
    DomainError,
    HypothesisViolation,
    NonlinearOverflow,
    NPBEError,
    SolveError,
)
from .linear_pbe import assemble_L, check_hypotheses, harmonic_lift, solve_linear_pbe
from .mesh import DomainKind, DomainSpec, Grid, GridFunction, discrete_norm
from .picard import NPBEProblem, PicardTrace, apply_A, apply_N, iterate, residual_strong

__version__ = "0.1.0"

__all__ = [
    "CoefficientSet",
    "ConstantsReport",
    "build_report",
    "lambda1_estimate",
    "BranchRangeError",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "HypothesisViolation",
    "NonlinearOverflow",
    "NPBEError",
    "SolveError",
    "assemble_L",
    "check_hypotheses",
    "harmonic_lift",
    "solve_linear_pbe",
    "DomainKind",
    "DomainSpec",
    "Grid",
    "GridFunction",
    "discrete_norm",
    "NPBEProblem",
    "PicardTrace",
    "apply_A",
    "apply_N",
    "iterate",
    "residual_strong",
]
