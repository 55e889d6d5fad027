"""Linear operator ``L = -div(eps grad .) + kappa^2``: assembly, the harmonic
boundary lift, Dirichlet solves and an empirical probe of ``||L^{-1}||``."""

from __future__ import annotations

import math
import threading
import weakref
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import constants
from .coefficients import CoefficientSet
from .errors import DomainError, HypothesisViolation, SolveError
from .mesh import Grid, GridFunction, discrete_norm, h2_gram_matrix

__all__ = [
    "HypothesisVerdict",
    "LinearSystem",
    "SolveInfo",
    "AprioriAudit",
    "apriori_audit",
    "check_hypotheses",
    "assemble_L",
    "harmonic_lift",
    "solve_linear_pbe",
    "probe_discrete_CH",
    "grid_lambda1",
]

ITERATIVE_THRESHOLD = 200_000
APRIORI_SLACK = 0.10


class HypothesisVerdict(NamedTuple):
    h2_ok: bool
    h3_ok: bool
    ratio: float
    theta: float
    mu: float


def check_hypotheses(coeffs: CoefficientSet, lambda1: float) -> HypothesisVerdict:
    """Ellipticity (``theta > 0``) and ``mu / theta < lambda1``.

    ``theta`` is the smallest nodal eigenvalue of the symmetric part of
    ``Re eps``, which equals ``min Re(xi^H eps xi) / |xi|^2`` over complex
    ``xi`` because ``Im eps`` is symmetric and contributes a purely imaginary
    quadratic form.
    """
    theta, mu = coeffs.theta, coeffs.mu
    h2 = theta > 0
    ratio = mu / (theta * lambda1) if h2 else math.inf
    return HypothesisVerdict(h2, h2 and mu / theta < lambda1, ratio, theta, mu)


_lambda_cache: "weakref.WeakKeyDictionary[Grid, constants.Lambda1]" = weakref.WeakKeyDictionary()
_lift_cache: "weakref.WeakKeyDictionary[Grid, LinearSystem]" = weakref.WeakKeyDictionary()
_cache_lock = threading.Lock()


def grid_lambda1(grid: Grid) -> constants.Lambda1:
    """:func:`constants.lambda1_estimate`, memoised per grid."""
    with _cache_lock:
        hit = _lambda_cache.get(grid)
    if hit is None:
        hit = constants.lambda1_estimate(grid)
        with _cache_lock:
            _lambda_cache[grid] = hit
    return hit


@dataclass(eq=False)
class LinearSystem:
    """``L_h`` split as ``interior`` (unknowns) and ``coupling`` (boundary columns)."""

    grid: Grid
    coeffs: CoefficientSet
    interior: sp.csc_matrix = field(repr=False)
    coupling: sp.csc_matrix = field(repr=False)
    iterative_threshold: int = ITERATIVE_THRESHOLD

    @property
    def size(self) -> int:
        return self.interior.shape[0]

    @cached_property
    def _lu(self):
        try:
            return spla.splu(self.interior)
        except RuntimeError as exc:
            raise SolveError(f"sparse factorization failed: {exc}") from exc

    @cached_property
    def _ilu(self):
        return spla.spilu(self.interior, drop_tol=1e-5, fill_factor=20)

    @property
    def method(self) -> str:
        return "iterative" if self.size > self.iterative_threshold else "direct"

    def solve_interior(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        rhs = np.asarray(rhs, dtype=complex)
        if self.method == "direct":
            x = self._lu.solve(rhs, trans=trans)
        else:
            A = self.interior if trans == "N" else (self.interior.T if trans == "T" else self.interior.conj().T)
            M = spla.LinearOperator(A.shape, lambda v: self._ilu.solve(v, trans=trans), dtype=complex)
            x, info = spla.gmres(A, rhs, M=M, rtol=1e-12, restart=200, maxiter=2000)
            if info != 0:
                raise SolveError(f"GMRES did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise SolveError("linear solve produced non-finite values")
        return x

    def apply(self, u: GridFunction) -> np.ndarray:
        """``L_h u`` on the interior nodes."""
        v = u.flat
        return self.interior @ v[self.grid.interior] + self.coupling @ v[self.grid.boundary]

    @cached_property
    def bounds(self) -> tuple[float, float] | None:
        """``(C_H bound, C_D bound)``, or ``None`` when the hypotheses fail."""
        lam = grid_lambda1(self.grid).value
        if not check_hypotheses(self.coeffs, lam).h3_ok:
            return None
        return constants.ch_bound(self.coeffs, lam), constants.cd_bound(self.coeffs)


def assemble_L(coeffs: CoefficientSet, grid: Grid | None = None) -> LinearSystem:
    """Flux-form second-order discretisation of ``L``.

    Diagonal tensor entries use arithmetic face averages (``2d+1`` stencil);
    off-diagonal entries add centred mixed differences on the corner nodes.
    """
    grid = coeffs.grid if grid is None else grid
    if coeffs.grid is not grid:
        raise DomainError("coefficients were built on a different grid")
    d = grid.dimension
    n = grid.size
    idx = np.arange(n).reshape(grid.shape)
    interior = grid.interior
    m = interior.size
    eps = coeffs.epsilon.reshape(n, d, d)
    rows_i = np.arange(m)

    def shift(steps):
        out = idx
        for axis, s in steps:
            out = np.roll(out, -s, axis=axis)
        return out.ravel()[interior]

    rows, cols, vals = [rows_i], [interior], [coeffs.kappa_sq.ravel()[interior].astype(complex)]
    for k, hk in enumerate(grid.spacing):
        for s in (-1, 1):
            nb = shift([(k, s)])
            a = 0.5 * (eps[interior, k, k] + eps[nb, k, k]) / hk**2
            rows += [rows_i, rows_i]
            cols += [interior, nb]
            vals += [a, -a]
    for i in range(d):
        for j in range(d):
            if i == j or not np.any(eps[:, i, j]):
                continue
            c = 1.0 / (4 * grid.spacing[i] * grid.spacing[j])
            for si in (-1, 1):
                e_side = eps[shift([(i, si)]), i, j] * c * si
                for sj in (-1, 1):
                    rows.append(rows_i)
                    cols.append(shift([(i, si), (j, sj)]))
                    vals.append(-e_side * sj)
    full = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, n)
    )
    return LinearSystem(
        grid,
        coeffs,
        sp.csc_matrix(full[:, interior]),
        sp.csc_matrix(full[:, grid.boundary]),
    )


def _laplace_system(grid: Grid) -> LinearSystem:
    with _cache_lock:
        hit = _lift_cache.get(grid)
    if hit is None:
        hit = assemble_L(CoefficientSet.from_scalar(grid, 1.0, 0.0))
        with _cache_lock:
            _lift_cache[grid] = hit
    return hit


def _boundary_array(grid: Grid, boundary_g) -> np.ndarray:
    nb = grid.boundary.size
    if isinstance(boundary_g, GridFunction):
        return boundary_g.boundary_values()
    if callable(boundary_g):
        return grid.evaluate(boundary_g).boundary_values()
    g = np.asarray(boundary_g, dtype=complex)
    if g.ndim == 0:
        return np.full(nb, complex(g))
    if g.size == grid.size:
        return g.ravel()[grid.boundary].copy()
    if g.size != nb:
        raise DomainError(f"expected {nb} boundary values, got {g.size}")
    return g.ravel().copy()


def harmonic_lift(boundary_g, grid: Grid) -> GridFunction:
    """Discrete harmonic extension of boundary data into the interior."""
    g = _boundary_array(grid, boundary_g)
    if not np.all(np.isfinite(g)):
        raise DomainError("boundary data must be finite")
    system = _laplace_system(grid)
    out = np.empty(grid.size, dtype=complex)
    out[grid.boundary] = g
    out[grid.interior] = system.solve_interior(-(system.coupling @ g))
    return GridFunction(grid, out)


@dataclass
class SolveInfo:
    residual: float
    method: str
    h2_norm: float
    f_norm: float
    w_h2_norm: float
    apriori_bound: float
    apriori_ok: bool | None


class AprioriAudit:
    """Tally of a-priori regularity checks made by :func:`solve_linear_pbe`."""

    def __init__(self):
        self._lock = threading.Lock()
        self.checked = 0
        self.violations: list[SolveInfo] = []

    def record(self, info: SolveInfo) -> None:
        if info.apriori_ok is None:
            return
        with self._lock:
            self.checked += 1
            if not info.apriori_ok:
                self.violations.append(info)

    def reset(self) -> None:
        with self._lock:
            self.checked = 0
            self.violations = []


apriori_audit = AprioriAudit()


def _as_values(grid: Grid, f) -> np.ndarray:
    if isinstance(f, GridFunction):
        return f.flat
    if callable(f):
        return grid.evaluate(f).flat
    return np.broadcast_to(np.asarray(f, dtype=complex), grid.shape).ravel()


def solve_linear_pbe(
    coeffs: CoefficientSet,
    f,
    boundary_g,
    grid: Grid | None = None,
    system: LinearSystem | None = None,
    lift: GridFunction | None = None,
) -> tuple[GridFunction, SolveInfo]:
    """Solve ``L_h u = f`` on interior nodes with ``u = g`` on the boundary.

    The returned info carries the relative residual and the a-priori
    regularity check ``||u||_H2 <= C_H ||f|| + (C_H C_D + 1) ||w||_H2``
    (10% slack), where ``w`` is the harmonic lift of ``g``.
    """
    grid = coeffs.grid if grid is None else grid
    system = assemble_L(coeffs, grid) if system is None else system
    verdict = check_hypotheses(coeffs, grid_lambda1(grid).value)
    if not (verdict.h2_ok and verdict.h3_ok):
        raise HypothesisViolation(
            f"linear solve requires theta > 0 and mu/theta < lambda1 (ratio={verdict.ratio:.6g})"
        )
    fv = _as_values(grid, f)
    g = _boundary_array(grid, boundary_g)
    rhs = fv[grid.interior] - system.coupling @ g
    out = np.empty(grid.size, dtype=complex)
    out[grid.boundary] = g
    out[grid.interior] = system.solve_interior(rhs)
    u = GridFunction(grid, out)
    res = system.interior @ out[grid.interior] - rhs
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    info = _audit(system, u, fv, lift if lift is not None else harmonic_lift(g, grid))
    info.residual = float(np.linalg.norm(res) / scale) if np.any(rhs) else float(np.linalg.norm(res))
    return u, info


def _audit(system: LinearSystem, u: GridFunction, fv: np.ndarray, w: GridFunction) -> SolveInfo:
    grid = system.grid
    f_int = np.zeros(grid.size, dtype=complex)
    f_int[grid.interior] = fv[grid.interior]
    f_norm = discrete_norm(GridFunction(grid, f_int), "L2")
    w_norm = discrete_norm(w, "H2")
    u_norm = discrete_norm(u, "H2")
    bounds = system.bounds
    if bounds is None:
        info = SolveInfo(math.nan, system.method, u_norm, f_norm, w_norm, math.nan, None)
    else:
        C_H, C_D = bounds
        bound = C_H * f_norm + (C_H * C_D + 1) * w_norm
        info = SolveInfo(math.nan, system.method, u_norm, f_norm, w_norm, bound,
                         u_norm <= (1 + APRIORI_SLACK) * bound)
    apriori_audit.record(info)
    return info


def probe_discrete_CH(
    coeffs: CoefficientSet,
    grid: Grid | None = None,
    trials: int = 4,
    seed: int = 0,
    max_iter: int = 300,
    rtol: float = 1e-9,
) -> float:
    """Empirical ``max ||u||_{H2,h} / ||f||_{L2,h}`` over zero-boundary solves.

    Each random start is refined by power iteration on the normal operator
    ``W^{-1} T^H G T`` with ``T = L_h^{-1}``, ``G`` the H2 Gram matrix and ``W``
    the quadrature weights.
    """
    grid = coeffs.grid if grid is None else grid
    system = assemble_L(coeffs, grid)
    I = grid.interior
    G = h2_gram_matrix(grid)[I][:, I].tocsr()
    W = grid.weights.ravel()[I]
    rng = np.random.Generator(np.random.Philox(seed))
    best = 0.0
    for _ in range(max(1, trials)):
        f = rng.standard_normal(I.size) + 1j * rng.standard_normal(I.size)
        est = 0.0
        for _ in range(max_iter):
            u = system.solve_interior(f)
            Gu = G @ u
            num = float(np.real(np.vdot(u, Gu)))
            den = float(np.real(np.vdot(f, W * f)))
            new = math.sqrt(num / den)
            z = system.solve_interior(Gu, trans="H") / W
            f = z / np.linalg.norm(z)
            if abs(new - est) <= rtol * new:
                est = new
                break
            est = new
        best = max(best, est)
    return best
