"""Fixed-point (Picard) iteration ``L u_k = f - N(u_{k-1})`` for the nPBE."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import constants
from .coefficients import CoefficientSet
from .errors import DomainError, HypothesisViolation, NonlinearOverflow
from .linear_pbe import (
    LinearSystem,
    _as_values,
    _boundary_array,
    assemble_L,
    grid_lambda1,
    harmonic_lift,
    solve_linear_pbe,
)
from .mesh import Grid, GridFunction, discrete_norm

__all__ = [
    "NPBEProblem",
    "PicardStatus",
    "PicardStep",
    "PicardTrace",
    "apply_N",
    "apply_A",
    "iterate",
    "residual_strong",
]

_SERIES_CUTOFF = 0.5
_SERIES_TERMS = 9  # |u| < 0.5: the next term is below 1e-19 relative


def _sinh_minus_id(u: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.sinh(u) - u
    small = np.abs(u) < _SERIES_CUTOFF
    if np.any(small):
        z = u[small]
        z2 = z * z
        term = z * z2 / 6.0
        acc = term.copy()
        for k in range(1, _SERIES_TERMS):
            term = term * z2 / ((2 * k + 2) * (2 * k + 3))
            acc = acc + term
        out[small] = acc
    return out


def apply_N(u: GridFunction, kappa_sq) -> GridFunction:
    """``kappa^2 (sinh u - u)`` nodewise.

    Raises :class:`NonlinearOverflow` when ``sinh`` leaves double range.
    """
    k2 = kappa_sq.kappa_sq if isinstance(kappa_sq, CoefficientSet) else kappa_sq
    k2 = np.broadcast_to(np.asarray(k2, dtype=complex), u.grid.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        val = k2 * _sinh_minus_id(u.values)
    if not np.all(np.isfinite(val)):
        raise NonlinearOverflow(f"sinh overflow (max |Re u| = {np.abs(u.real).max():.3g})")
    return GridFunction(u.grid, val)


@dataclass(eq=False)
class NPBEProblem:
    """Data of ``-div(eps grad u) + kappa^2 sinh u = f`` with ``u = g`` on the boundary."""

    coeffs: CoefficientSet
    f: GridFunction
    g: np.ndarray = field(repr=False)
    N_omega: int = 1
    grad_zeta_inf: float | None = None

    @classmethod
    def create(cls, coeffs: CoefficientSet, f=0.0, g=0.0, **kw) -> "NPBEProblem":
        grid = coeffs.grid
        f = f if isinstance(f, GridFunction) else GridFunction(grid, _as_values(grid, f))
        return cls(coeffs, f, _boundary_array(grid, g), **kw)

    def __post_init__(self):
        if self.f.grid is not self.coeffs.grid:
            raise DomainError("f and the coefficients live on different grids")
        self.g = np.asarray(self.g, dtype=complex)
        if self.g.shape != (self.grid.boundary.size,):
            raise DomainError("g must hold one value per boundary node")

    @property
    def grid(self) -> Grid:
        return self.coeffs.grid

    @cached_property
    def system(self) -> LinearSystem:
        return assemble_L(self.coeffs)

    @cached_property
    def lift(self) -> GridFunction:
        return harmonic_lift(self.g, self.grid)

    @cached_property
    def f_norm(self) -> float:
        v = np.zeros(self.grid.size, dtype=complex)
        v[self.grid.interior] = self.f.flat[self.grid.interior]
        return discrete_norm(GridFunction(self.grid, v), "L2")

    @cached_property
    def w_h2_norm(self) -> float:
        return discrete_norm(self.lift, "H2")

    @cached_property
    def lambda1(self) -> float:
        return grid_lambda1(self.grid).value

    @cached_property
    def C_S(self) -> float:
        return constants.sobolev_constant(self.grid.domain).C_S_upper

    @cached_property
    def C_H(self) -> float:
        return constants.ch_bound(self.coeffs, self.lambda1, self.N_omega, self.grad_zeta_inf)

    @cached_property
    def C_D(self) -> float:
        return constants.cd_bound(self.coeffs)

    @property
    def measure(self) -> float:
        return self.grid.domain.measure

    def conditions(self, M: float) -> constants.Conditions:
        return constants.m0_and_conditions(
            self.C_S, self.C_H, self.C_D, self.coeffs.kappa_sq_inf, self.measure,
            self.f_norm, self.w_h2_norm, M,
        )

    def M0(self) -> float:
        return constants.admissible_m0(self.C_S, self.C_H, self.coeffs.kappa_sq_inf, self.measure)

    def select_radius(self) -> float | None:
        return constants.select_radius(
            self.C_S, self.C_H, self.C_D, self.coeffs.kappa_sq_inf, self.measure,
            self.f_norm, self.w_h2_norm,
        )

    def gamma(self, M: float) -> float:
        return constants.contraction_factor(M, self.C_S, self.C_H, self.coeffs.kappa_sq_inf, self.measure)


def apply_A(u: GridFunction, problem: NPBEProblem, M: float | None = None) -> GridFunction:
    """``A(u) = K(f - N(u) - L w) + w``: one linear solve with right side ``f - N(u)``.

    With ``M`` given, ``u`` must lie in the closed discrete H2 ball of that radius.
    """
    if M is not None:
        r = discrete_norm(u, "H2")
        if r > M * (1 + 1e-12):
            raise DomainError(f"||u||_H2 = {r:.6g} lies outside the admissible ball M = {M:.6g}")
    rhs = problem.f - apply_N(u, problem.coeffs)
    out, _ = solve_linear_pbe(
        problem.coeffs, rhs, problem.g, system=problem.system, lift=problem.lift
    )
    return out


def residual_strong(u: GridFunction, problem: NPBEProblem) -> float:
    """Interior L2 residual of the nonlinear equation plus boundary mismatch."""
    grid = problem.grid
    r = problem.system.apply(u) + apply_N(u, problem.coeffs).flat[grid.interior] - problem.f.flat[grid.interior]
    w = grid.weights.ravel()[grid.interior]
    interior = math.sqrt(float(np.sum(w * np.abs(r) ** 2)))
    bnd = float(np.max(np.abs(u.flat[grid.boundary] - problem.g), initial=0.0))
    return interior + bnd


class PicardStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class PicardStep:
    k: int
    norm_u: float
    increment: float
    observed_ratio: float
    gamma_theory: float
    residual: float


@dataclass
class PicardTrace:
    M: float
    tol: float
    gamma_theory: float
    steps: list[PicardStep] = field(default_factory=list)
    status: PicardStatus = PicardStatus.MAX_ITERATIONS
    reason: str = ""

    @property
    def iterations(self) -> int:
        return self.steps[-1].k if self.steps else 0

    @property
    def ratios(self) -> list[float]:
        return [s.observed_ratio for s in self.steps if s.k >= 2]

    @property
    def final_residual(self) -> float:
        return self.steps[-1].residual if self.steps else math.nan

    def snapshot(self) -> "PicardTrace":
        return PicardTrace(self.M, self.tol, self.gamma_theory, list(self.steps), self.status, self.reason)

    def to_csv(self, target) -> None:
        own = isinstance(target, (str, Path))
        fh = open(target, "w", newline="") if own else target
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "norm_u", "increment", "observed_ratio", "gamma_theory", "residual"])
            for s in self.steps:
                w.writerow([s.k, *(repr(float(x)) for x in
                                   (s.norm_u, s.increment, s.observed_ratio, s.gamma_theory, s.residual))])
        finally:
            if own:
                fh.close()


DIVERGENCE_RUN = 5


def iterate(
    problem: NPBEProblem,
    M: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    u_init: GridFunction | None = None,
    require_schauder: bool = True,
) -> tuple[GridFunction, PicardTrace]:
    """Run ``u_k = A(u_{k-1})`` from the linearised solution (or ``u_init``).

    Stops when ``||u_k - u_{k-1}||_H2 <= tol * max(1, ||u_k||_H2)``.  The
    iteration is declared divergent after ``DIVERGENCE_RUN`` consecutive
    growing increments, on leaving the ``2M`` ball, or on overflow.
    """
    if M <= 0 or tol <= 0 or max_iter < 1:
        raise ValueError("M, tol and max_iter must be positive")
    cond = problem.conditions(M)
    if require_schauder and not cond.schauder_ok:
        raise HypothesisViolation(
            f"Schauder condition fails for M = {M:.6g} (margin {cond.margin:.3g})"
        )
    trace = PicardTrace(M, tol, cond.gamma)
    if u_init is None:
        u, _ = solve_linear_pbe(problem.coeffs, problem.f, problem.g,
                                system=problem.system, lift=problem.lift)
    else:
        u = u_init
    trace.steps.append(PicardStep(0, discrete_norm(u, "H2"), math.nan, math.nan, cond.gamma,
                                  residual_strong(u, problem)))
    prev_inc = math.nan
    growing = 0
    for k in range(1, max_iter + 1):
        try:
            new = apply_A(u, problem)
        except NonlinearOverflow as exc:
            trace.status, trace.reason = PicardStatus.DIVERGED, str(exc)
            return u, trace
        inc = discrete_norm(new - u, "H2")
        norm = discrete_norm(new, "H2")
        ratio = inc / prev_inc if k >= 2 and prev_inc > 0 else math.nan
        try:
            res = residual_strong(new, problem)
        except NonlinearOverflow:
            res = math.inf
        trace.steps.append(PicardStep(k, norm, inc, ratio, cond.gamma, res))
        u = new
        if inc <= tol * max(1.0, norm):
            trace.status = PicardStatus.CONVERGED
            return u, trace
        growing = growing + 1 if k >= 2 and inc > prev_inc else 0
        if growing >= DIVERGENCE_RUN:
            trace.status, trace.reason = PicardStatus.DIVERGED, "increments grew 5 steps in a row"
            return u, trace
        if norm > 2 * M:
            trace.status, trace.reason = PicardStatus.DIVERGED, f"left the 2M ball (||u|| = {norm:.3g})"
            return u, trace
        prev_inc = inc
    trace.status = PicardStatus.MAX_ITERATIONS
    return u, trace
