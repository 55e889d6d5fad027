"""Nontrivial branch of ``-u'' + (eta - lambda1) sinh u = 0`` through ``(0, 0)``.

The branch is parametrised by the amplitude ``s = <u, v0>_h`` along the
principal Dirichlet eigenfunction; each point solves the bordered Newton
system for ``(u, eta)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .constants import principal_dirichlet_pair
from .errors import BranchRangeError, ConvergenceError, DomainError, SolveError
from .mesh import Grid, GridFunction, dirichlet_laplacian, discrete_norm

__all__ = [
    "BranchPoint",
    "Branch",
    "BranchFit",
    "principal_eigenpair",
    "solve_on_branch",
    "continue_branch",
    "weakly_nonlinear_eta2",
    "transversality_residual",
    "trivial_jacobian_min_eig",
    "solutions_for_eta",
]

BRANCH_TOL = 1e-10
NEWTON_MAX = 50
S_LIMIT = 0.5


@dataclass(frozen=True)
class BranchPoint:
    s: float
    eta: float
    u: GridFunction = field(repr=False)
    newton_residual: float
    u_h2_norm: float
    iterations: int = 0
    non_isolated: bool = False


class _Eigen:
    """Grid-level data shared by every branch solve."""

    def __init__(self, grid: Grid):
        if grid.dimension != 1:
            raise DomainError("the branch solver works on 1-D intervals")
        self.grid = grid
        self.lam, v = principal_dirichlet_pair(grid)
        self.K = dirichlet_laplacian(grid).tocsr()
        self.wI = grid.weights.ravel()[grid.interior]
        v = v / math.sqrt(float(np.sum(self.wI * v * v)))
        self.vI = v

    def full(self, uI: np.ndarray) -> GridFunction:
        out = np.zeros(self.grid.size)
        out[self.grid.interior] = uI
        return GridFunction(self.grid, out)

    def F(self, uI: np.ndarray, eta: float) -> np.ndarray:
        return self.K @ uI + (eta - self.lam) * np.sinh(uI)

    def residual(self, uI, eta, s=None) -> float:
        r = math.sqrt(float(np.sum(self.wI * self.F(uI, eta) ** 2)))
        if s is not None:
            r += abs(float(np.sum(self.wI * self.vI * uI)) - s)
        return r


_eigen_cache: dict[int, _Eigen] = {}


def _eigen(grid: Grid) -> _Eigen:
    e = _eigen_cache.get(id(grid))
    if e is None or e.grid is not grid:
        e = _Eigen(grid)
        _eigen_cache.clear()
        _eigen_cache[id(grid)] = e
    return e


def principal_eigenpair(grid: Grid) -> tuple[float, GridFunction]:
    """``(lambda1_h, v0)`` with ``||v0||_{L2,h} = 1`` and ``v0 > 0`` inside."""
    e = _eigen(grid)
    return e.lam, e.full(e.vI)


def _point(e: _Eigen, s, eta, uI, it, flag=False) -> BranchPoint:
    u = e.full(uI)
    return BranchPoint(float(s), float(eta), u, e.residual(uI, eta, s if not flag else None),
                       discrete_norm(u, "H2"), it, flag)


def solve_on_branch(
    grid: Grid,
    s: float,
    eta_guess: float = 0.0,
    u_guess: np.ndarray | GridFunction | None = None,
    tol: float = BRANCH_TOL,
    max_iter: int = NEWTON_MAX,
    s_limit: float = S_LIMIT,
) -> BranchPoint:
    """Newton on ``{-D2 u + (eta - lambda1) sinh u = 0, <u, v0>_h = s}``."""
    if abs(s) > s_limit:
        raise DomainError(f"|s| = {abs(s)} exceeds the branch limit {s_limit}")
    e = _eigen(grid)
    n = e.vI.size
    if s == 0:
        return _point(e, 0.0, eta_guess, np.zeros(n), 0, flag=True)
    if u_guess is None:
        uI = s * e.vI
    elif isinstance(u_guess, GridFunction):
        uI = u_guess.real.ravel()[grid.interior].copy()
    else:
        uI = np.asarray(u_guess, dtype=float).copy()
    eta = float(eta_guess)
    border = sp.csr_matrix((e.wI * e.vI)[None, :])
    for it in range(1, max_iter + 1):
        F = e.F(uI, eta)
        g = float(np.sum(e.wI * e.vI * uI)) - s
        J = sp.bmat([
            [e.K + sp.diags((eta - e.lam) * np.cosh(uI)), sp.csr_matrix(np.sinh(uI)[:, None])],
            [border, None],
        ], format="csc")
        try:
            step = spla.splu(J).solve(-np.concatenate([F, [g]]))
        except RuntimeError as exc:
            raise SolveError(f"singular bordered Jacobian at s = {s}: {exc}") from exc
        uI += step[:n]
        eta += step[n]
        if not np.all(np.isfinite(uI)) or not math.isfinite(eta):
            raise ConvergenceError(f"Newton produced non-finite iterates at s = {s}")
        if e.residual(uI, eta, s) <= tol:
            return _point(e, s, eta, uI, it)
    raise ConvergenceError(f"Newton did not converge at s = {s} in {max_iter} steps")


@dataclass(frozen=True)
class BranchFit:
    """Least-squares polynomial ``eta(s) = sum_k coef[k] s^k``."""

    coef: np.ndarray

    @property
    def eta_prime0(self) -> float:
        return float(self.coef[1])

    @property
    def eta_second0(self) -> float:
        return float(2 * self.coef[2])

    @property
    def eta2(self) -> float:
        return float(self.coef[2])

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, self.coef)


@dataclass
class Branch:
    grid: Grid
    lambda1: float
    points: list[BranchPoint]

    @property
    def s(self) -> np.ndarray:
        return np.array([p.s for p in self.points])

    @property
    def eta(self) -> np.ndarray:
        return np.array([p.eta for p in self.points])

    def fit(self, degree: int = 4) -> BranchFit:
        s, eta = self.s, self.eta
        if s.size <= degree:
            raise ValueError(f"need more than {degree} branch points for the fit")
        return BranchFit(np.polynomial.polynomial.polyfit(s, eta, degree))

    def evenness(self) -> float:
        """``max |eta(s) - eta(-s)|`` over mirrored sample pairs."""
        by_s = {p.s: p.eta for p in self.points}
        return max((abs(by_s[s] - by_s[-s]) for s in by_s if -s in by_s), default=0.0)

    def oddness(self) -> float:
        """``max ||u(s) + u(-s)||_inf`` over mirrored sample pairs."""
        by_s = {p.s: p.u.real for p in self.points}
        return max((float(np.max(np.abs(by_s[s] + by_s[-s]))) for s in by_s if -s in by_s), default=0.0)

    def to_csv(self, target) -> None:
        own = isinstance(target, (str, Path))
        fh = open(target, "w", newline="") if own else target
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "eta", "u_h2_norm", "newton_residual"])
            for p in self.points:
                w.writerow([repr(p.s), repr(p.eta), repr(p.u_h2_norm), repr(p.newton_residual)])
        finally:
            if own:
                fh.close()


def continue_branch(grid: Grid, s_values, tol: float = BRANCH_TOL) -> Branch:
    """Sequential continuation outward from ``s = 0`` in both directions."""
    s_values = sorted(float(s) for s in s_values)
    if not s_values:
        raise ValueError("no s values given")
    if max(abs(s) for s in s_values) > S_LIMIT:
        raise DomainError(f"branch samples must satisfy |s| <= {S_LIMIT}")
    if not np.allclose(sorted(-s for s in s_values), s_values, rtol=0, atol=1e-14):
        raise ValueError("s values must be symmetric around 0")
    e = _eigen(grid)
    points = {}
    for side in (1, -1):
        ordered = sorted((s for s in s_values if side * s > 0), key=abs)
        prev = None
        for s in ordered:
            if prev is None:
                guess = weakly_nonlinear_eta2(grid) * s * s
                try:
                    points[s] = solve_on_branch(grid, s, guess, tol=tol)
                except (ConvergenceError, SolveError) as exc:
                    raise ConvergenceError(f"branch failed at s = {s}: {exc}") from exc
            else:
                try:
                    points[s] = solve_on_branch(grid, s, prev.eta, prev.u * (s / prev.s), tol=tol)
                except (ConvergenceError, SolveError) as exc:
                    raise ConvergenceError(f"branch failed at s = {s}: {exc}") from exc
            prev = points[s]
    if 0.0 in s_values:
        points[0.0] = solve_on_branch(grid, 0.0, 0.0)
    return Branch(grid, e.lam, [points[s] for s in s_values])


def weakly_nonlinear_eta2(grid: Grid) -> float:
    """``eta_2`` in ``eta = eta_2 s^2 + O(s^4)`` from projecting the cubic term.

    With ``u = s v0 + s^3 u3``, the ``s^3`` balance projected on ``v0`` gives
    ``eta_2 <v0, v0> = lambda1 <v0^4> / 6``.
    """
    e = _eigen(grid)
    v = e.vI
    return e.lam * float(np.sum(e.wI * v**4)) / (6 * float(np.sum(e.wI * v**2)))


def trivial_jacobian_min_eig(grid: Grid, eta: float, lambda1: float | None = None) -> float:
    """Smallest eigenvalue of ``-D2 + (eta - lambda1)`` (default ``lambda1_h``)."""
    e = _eigen(grid)
    lam = e.lam if lambda1 is None else lambda1
    return e.lam + eta - lam


def transversality_residual(grid: Grid) -> float:
    """``min_x ||J0 x - v0|| / ||v0||`` for the singular ``J0 = -D2 - lambda1_h``.

    A value near 1 says ``v0`` lies outside the range of ``J0``.
    """
    e = _eigen(grid)
    J0 = (e.K - e.lam * sp.identity(e.vI.size)).toarray()
    x, *_ = np.linalg.lstsq(J0, e.vI, rcond=1e-10)
    return float(np.linalg.norm(J0 @ x - e.vI) / np.linalg.norm(e.vI))


def _newton_fixed_eta(e: _Eigen, uI: np.ndarray, eta: float, tol: float, max_iter: int = NEWTON_MAX):
    for it in range(1, max_iter + 1):
        J = (e.K + sp.diags((eta - e.lam) * np.cosh(uI))).tocsc()
        uI = uI - spla.splu(J).solve(e.F(uI, eta))
        if e.residual(uI, eta) <= tol:
            return uI, it
    raise ConvergenceError(f"fixed-eta Newton did not converge for eta = {eta}")


def solutions_for_eta(branch: Branch, eta: float, c_cap: float, tol: float = BRANCH_TOL) -> list[BranchPoint]:
    """Solutions ``u``, ``-u`` and ``0`` of the homogeneous problem at this ``eta``.

    ``eta`` must lie strictly between ``0`` and ``eta(s*)``, where ``s*`` is
    the largest positive sample with ``||u||_H2 < c_cap``.
    """
    pos = [p for p in branch.points if p.s > 0 and p.u_h2_norm < c_cap]
    if len(pos) < 2:
        raise BranchRangeError("not enough positive branch samples below c_cap")
    s = np.array([p.s for p in pos])
    etas = np.array([p.eta for p in pos])
    d = np.diff(etas)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise BranchRangeError("eta(s) is not strictly monotone on the sampled half-branch")
    lo, hi = sorted((0.0, float(etas[-1])))
    if not lo <= eta <= hi or eta == 0:
        raise BranchRangeError(f"eta = {eta!r} lies outside the covered range ({lo!r}, {hi!r}), 0 excluded")
    fit = branch.fit()
    s_star = float(s[-1])
    s_rec = brentq(lambda x: float(fit(x)) - eta, 1e-12, s_star, xtol=1e-14)
    e = _eigen(branch.grid)
    nearest = min(pos, key=lambda p: abs(p.s - s_rec))
    guess = nearest.u.real.ravel()[branch.grid.interior] * (s_rec / nearest.s)
    uI, it = _newton_fixed_eta(e, guess, eta, tol)
    s_u = float(np.sum(e.wI * e.vI * uI))
    plus = BranchPoint(s_u, eta, e.full(uI), e.residual(uI, eta),
                       discrete_norm(e.full(uI), "H2"), it)
    minus = BranchPoint(-s_u, eta, e.full(-uI), e.residual(-uI, eta), plus.u_h2_norm, it)
    zero = BranchPoint(0.0, eta, e.full(np.zeros_like(uI)), 0.0, 0.0, 0)
    return [plus, minus, zero]
