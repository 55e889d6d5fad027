"""Radial reduction ``y'' + A y'/r + kt^2 sinh y = lam`` of the nPBE with
``kappa = i kt``: trajectories, Hamiltonian bookkeeping, zero radii and
non-uniqueness certificates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ConvergenceError

__all__ = [
    "RadialProblem",
    "PhaseState",
    "Trajectory",
    "integrate_radial",
    "regularization_limit",
    "RegularizationResult",
    "hamiltonian_decay_check",
    "energy_violations",
    "find_zero_radii",
    "ZeroRadii",
    "linear_first_zero",
    "Certificate",
    "nonuniqueness_certificate",
    "return_to_start",
    "phase_portrait",
]

TAYLOR_R0 = 1e-6
MAX_Y_STEP = 0.1
C_B = math.pi  # R > C_B / kt makes kt^2 exceed the principal eigenvalue scale


@dataclass(frozen=True)
class RadialProblem:
    """``A = dimension - 1`` unless ``A`` is given explicitly.

    ``linear=True`` replaces ``sinh y`` by ``y`` (the Bessel comparison
    problem).
    """

    kappa_tilde: float = 1.0
    lam: float = 0.0
    c: float = 1.0
    dimension: int | None = 3
    A: float | None = None
    epsilon_reg: float = 1e-3
    r_max: float = 20.0
    linear: bool = False

    def __post_init__(self):
        if self.A is None:
            if self.dimension is None or self.dimension < 1:
                raise ValueError("need dimension >= 1 or an explicit A >= 0")
            object.__setattr__(self, "A", float(self.dimension - 1))
        if self.A < 0:
            raise ValueError(f"A must be >= 0, got {self.A}")
        if not self.kappa_tilde > 0:
            raise ValueError("kappa_tilde must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0 (the sign of lambda is a symmetry)")
        if not self.epsilon_reg > 0:
            raise ValueError("epsilon_reg must be positive")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if not math.isfinite(self.c):
            raise ValueError("c must be finite")

    @property
    def k2(self) -> float:
        return self.kappa_tilde**2

    @property
    def y_target(self) -> float:
        """Equilibrium value, also the boundary value of both certified solutions."""
        q = self.lam / self.k2
        return q if self.linear else math.asinh(q)

    def source(self, y):
        return y if self.linear else np.sinh(y)

    def hamiltonian(self, y, w):
        pot = 0.5 * y**2 if self.linear else np.cosh(y) - 1.0
        return 0.5 * w**2 + self.k2 * pot - self.lam * y

    def taylor_coefficient(self) -> float:
        """``a`` in ``y = c + a r^2 + O(r^4)``."""
        return (self.lam - self.k2 * float(self.source(self.c))) / (2.0 * (self.A + 1.0))

    def with_(self, **kw) -> "RadialProblem":
        if "dimension" in kw and "A" not in kw:
            kw["A"] = None
        return replace(self, **kw)


class PhaseState(NamedTuple):
    r: float
    y: float
    w: float
    H: float


@dataclass(eq=False)
class Trajectory:
    problem: RadialProblem
    mode: str
    r: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    tol: float
    eps: float  # 0 for the Taylor-start (unregularised) mode
    sol: object = field(default=None, repr=False)

    @cached_property
    def H(self) -> np.ndarray:
        return self.problem.hamiltonian(self.y, self.w)

    @property
    def H0(self) -> float:
        """Hamiltonian of the initial condition ``(c, 0)``."""
        return float(self.problem.hamiltonian(self.problem.c, 0.0))

    def __len__(self):
        return self.r.size

    def states(self) -> list[PhaseState]:
        return [PhaseState(*t) for t in zip(self.r.tolist(), self.y.tolist(), self.w.tolist(), self.H.tolist())]

    def __call__(self, r):
        """Dense ``(y, w)`` at radii ``r``."""
        r = np.asarray(r, dtype=float)
        if self.sol is None:
            return np.full_like(r, self.y[0]), np.zeros_like(r)
        yw = self.sol(r)
        return yw[0], yw[1]

    def to_csv(self, target) -> None:
        own = isinstance(target, (str, Path))
        fh = open(target, "w", newline="") if own else target
        try:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["r", "y", "w", "H"])
            for row in zip(self.r, self.y, self.w, self.H):
                wr.writerow([repr(float(v)) for v in row])
        finally:
            if own:
                fh.close()


def _rhs(p: RadialProblem, eps: float):
    A, k2, lam = p.A, p.k2, p.lam
    lin = p.linear

    def f(r, s):
        y, w = s
        src = y if lin else math.sinh(y)
        drag = A * w / (r + eps) if A else 0.0
        return [w, lam - k2 * src - drag]

    return f


def _resample(sol, t: np.ndarray) -> np.ndarray:
    """Insert dense-output radii until consecutive y-samples differ by <= MAX_Y_STEP."""
    t = np.asarray(t, dtype=float)
    for _ in range(60):
        y = sol(t)[0]
        jump = np.abs(np.diff(y))
        bad = np.nonzero(jump > MAX_Y_STEP)[0]
        if bad.size == 0:
            return t
        extra = []
        for i in bad:
            k = int(math.ceil(jump[i] / (0.5 * MAX_Y_STEP)))
            extra.append(np.linspace(t[i], t[i + 1], k + 1)[1:-1])
        t = np.union1d(t, np.concatenate(extra))
    raise ConvergenceError("could not resolve the trajectory to the y-step limit")


def integrate_radial(
    p: RadialProblem,
    tol: float = 1e-10,
    mode: str = "taylor",
    r_max: float | None = None,
    eps: float | None = None,
) -> Trajectory:
    """RK45 (Dormand-Prince) integration with ``rtol = atol = tol``.

    ``mode="regularized"`` integrates the system with ``A w / (r + eps)``
    from ``r = 0``; ``mode="taylor"`` starts the unregularised ODE at
    ``r0 = 1e-6`` from the series ``y = c + a r^2``.
    """
    if not 0 < tol <= 1e-3:
        raise ValueError("tol must lie in (0, 1e-3]")
    if mode not in ("taylor", "regularized"):
        raise ValueError(f"unknown mode {mode!r}")
    r_max = p.r_max if r_max is None else r_max
    e = (p.epsilon_reg if eps is None else eps) if mode == "regularized" else 0.0
    if p.c == p.y_target:
        r = np.linspace(0.0, r_max, max(2, int(math.ceil(r_max / 0.1)) + 1))
        return Trajectory(p, mode, r, np.full_like(r, p.c), np.zeros_like(r), tol, e)
    if mode == "taylor" and p.A > 0:
        a = p.taylor_coefficient()
        r0 = TAYLOR_R0
        s0 = [p.c + a * r0**2, 2 * a * r0]
    else:
        r0, s0 = 0.0, [p.c, 0.0]
    res = solve_ivp(_rhs(p, e), (r0, r_max), s0, method="RK45", rtol=tol, atol=tol, dense_output=True)
    if res.status != 0:
        raise ConvergenceError(f"integration stopped at r = {res.t[-1]:.6g}: {res.message}")
    if not np.all(np.isfinite(res.y)):
        raise ConvergenceError(f"non-finite state reached before r = {res.t[-1]:.6g}")
    t = _resample(res.sol, res.t)
    yw = res.sol(t)
    yw[:, 0] = s0
    yw[:, -1] = res.y[:, -1]
    return Trajectory(p, mode, t, yw[0], yw[1], tol, e, res.sol)


def _gauss(traj: Trajectory, fn, order: int = 8) -> np.ndarray:
    """Interval-wise Gauss-Legendre integrals of ``fn(r, y, w)`` between samples."""
    x, wts = np.polynomial.legendre.leggauss(order)
    a, b = traj.r[:-1], traj.r[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * x[None, :]
    y, w = traj(nodes.ravel())
    vals = fn(nodes.ravel(), y, w).reshape(nodes.shape)
    return half * (vals @ wts)


def hamiltonian_decay_check(traj: Trajectory, A: float | None = None, eps_reg: float | None = None) -> float:
    """Max over the trajectory of ``|H(r) - H(r_start) + int A w^2/(rho + eps)|``.

    This is the integrated form of ``dH/dr = -A w^2 / (r + eps)``; the
    integral is computed by Gauss quadrature on the dense output.
    """
    A = traj.problem.A if A is None else A
    e = traj.eps if eps_reg is None else eps_reg
    if traj.sol is None or A == 0:
        return float(np.max(np.abs(traj.H - traj.H[0])))
    loss = np.concatenate([[0.0], np.cumsum(_gauss(traj, lambda r, y, w: A * w**2 / (r + e)))])
    return float(np.max(np.abs(traj.H - traj.H[0] + loss)))


def energy_violations(traj: Trajectory, slack: float | None = None) -> int:
    """Number of samples with ``H(r) > H(c, 0) + slack`` (default ``10 tol``)."""
    slack = 10 * traj.tol if slack is None else slack
    return int(np.count_nonzero(traj.H > traj.H0 + slack))


@dataclass
class RegularizationResult:
    trajectory: Trajectory
    eps_sequence: tuple[float, ...]
    differences: list[float]
    ratios: list[float]

    @property
    def converged(self) -> bool:
        d = self.differences
        return all(d[i + 1] <= 10 * d[i] or d[i + 1] == 0.0 for i in range(len(d) - 1))

    @property
    def monotone(self) -> bool:
        d = self.differences
        return all(d[i + 1] <= d[i] for i in range(len(d) - 1))


def regularization_limit(
    p: RadialProblem, eps_sequence=(1e-2, 1e-3, 1e-4), tol: float = 1e-10
) -> RegularizationResult:
    """Integrate the regularised system for each ``eps`` and compare levels."""
    eps_sequence = tuple(float(e) for e in eps_sequence)
    if len(eps_sequence) < 2:
        raise ValueError("need at least two regularisation levels")
    if any(e < 1e-8 for e in eps_sequence) or any(
        b >= a for a, b in zip(eps_sequence, eps_sequence[1:])
    ):
        raise ValueError("eps_sequence must be strictly decreasing and >= 1e-8")
    trajs = [integrate_radial(p, tol, mode="regularized", eps=e) for e in eps_sequence]
    grid = trajs[-1].r
    ys = [t(grid)[0] for t in trajs]
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(ys, ys[1:])]
    ratios = [b / a if a > 0 else (0.0 if b == 0 else math.inf) for a, b in zip(diffs, diffs[1:])]
    return RegularizationResult(trajs[-1], eps_sequence, diffs, ratios)


@dataclass
class ZeroRadii:
    radii: list[float]
    complete: bool
    trajectory: Trajectory


def _zero_cap(p: RadialProblem) -> float:
    return 100.0 * max(1.0, 2 * math.pi / p.kappa_tilde)


def find_zero_radii(
    p: RadialProblem,
    traj: Trajectory | None = None,
    n_wanted: int = 3,
    tol: float = 1e-10,
    xtol: float = 1e-12,
) -> ZeroRadii:
    """Radii where ``y = y_target``, by sign-change bracketing on the dense
    output and Brent refinement.  ``r_max`` doubles up to
    ``100 max(1, 2 pi / kt)`` until ``n_wanted`` crossings are found."""
    target = p.y_target
    traj = integrate_radial(p, tol) if traj is None else traj
    cap = _zero_cap(p)
    while True:
        radii = []
        if traj.sol is not None:
            g = traj.y - target
            idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
            for i in idx:
                fn = lambda r: float(traj.sol(r)[0] - target)
                radii.append(brentq(fn, traj.r[i], traj.r[i + 1], xtol=xtol, rtol=4 * np.finfo(float).eps))
                if len(radii) == n_wanted:
                    break
        if len(radii) >= n_wanted or traj.r[-1] >= cap or traj.sol is None:
            return ZeroRadii(radii, len(radii) >= n_wanted, traj)
        traj = integrate_radial(p, traj.tol, mode=traj.mode, r_max=min(cap, 2 * traj.r[-1]),
                                eps=traj.eps or None)


def linear_first_zero(A: float, tol: float = 1e-12) -> float:
    """First zero of the regular solution of ``y'' + A y'/r + y = 0``
    (``pi/2`` for ``A = 0``, ``j_{0,1}`` for ``A = 1``, ``pi`` for ``A = 2``)."""
    z = find_zero_radii(RadialProblem(1.0, 0.0, 1.0, dimension=None, A=A, linear=True, r_max=10.0),
                        n_wanted=1, tol=tol)
    return z.radii[0]


def _defects(sol_fn, rhs, a: float, b: float, n: int = 400) -> float:
    """Mean-value ODE defect on a uniform verification grid over ``[a, b]``.

    On each cell the quantities ``(Y(b_i) - Y(a_i) - int F(r, Y)) / |cell|``
    are formed with 8-point Gauss quadrature; the max modulus is returned.
    """
    x, wts = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(a, b, n + 1)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi))[:, None] + half[:, None] * x[None, :]
    y, w = sol_fn(nodes.ravel())
    F0, F1 = rhs(nodes.ravel(), y, w)
    ints0 = half * (F0.reshape(nodes.shape) @ wts)
    ints1 = half * (F1.reshape(nodes.shape) @ wts)
    ya, wa = sol_fn(lo)
    yb, wb = sol_fn(hi)
    d = np.maximum(np.abs(yb - ya - ints0), np.abs(wb - wa - ints1)) / (hi - lo)
    return float(d.max())


@dataclass
class Certificate:
    problem: RadialProblem
    R: float
    index: int
    zero_radii: list[float]
    trivial_value: float
    nontrivial: Trajectory
    residual_trivial: float
    residual_nontrivial: float
    boundary_mismatch: float
    max_deviation: float
    mu_over_theta: float
    lambda1_R: float
    lambda1_first_zero: float
    z1: float

    @property
    def witness_ok(self) -> bool:
        return self.mu_over_theta >= self.lambda1_R

    def report(self) -> str:
        p = self.problem
        lines = [
            "non-uniqueness certificate",
            f"A = {p.A!r}",
            f"dimension = {p.dimension!r}",
            f"kappa_tilde = {p.kappa_tilde!r}",
            f"lambda = {p.lam!r}",
            f"c = {p.c!r}",
            f"R = {self.R!r}",
            f"zero_index = {self.index}",
            f"zero_radii = {', '.join(repr(r) for r in self.zero_radii)}",
            f"boundary_value = {self.trivial_value!r}",
            f"boundary_mismatch_nontrivial = {self.boundary_mismatch!r}",
            f"solution_1 = constant y = {self.trivial_value!r}",
            f"solution_1_residual = {self.residual_trivial!r}",
            f"solution_2 = integrated trajectory from y(0) = {p.c!r}",
            f"solution_2_residual = {self.residual_nontrivial!r}",
            f"max_deviation = {self.max_deviation!r}",
            f"mu_over_theta = {self.mu_over_theta!r}",
            f"lambda1_R = {self.lambda1_R!r}",
            f"lambda1_R1 = {self.lambda1_first_zero!r}",
            f"hypothesis3_violated = {self.witness_ok}",
        ]
        return "\n".join(lines) + "\n"


def nonuniqueness_certificate(p: RadialProblem, tol: float = 1e-10, max_zeros: int = 50) -> Certificate:
    """Two solutions of the radial Dirichlet problem on the ball of radius ``R``.

    ``R`` is the first zero radius with ``R > C_B / kt`` at which the
    Hypothesis-3 witness ``mu/theta = kt^2 >= lambda1(R) = (z1/R)^2`` holds.
    """
    if p.c == p.y_target:
        raise ValueError("c equals the equilibrium value; only the trivial solution exists")
    z1 = linear_first_zero(p.A)
    mu_theta = p.k2  # kappa^2 = -kt^2 with eps = 1
    traj = integrate_radial(p, tol)
    for n in range(1, max_zeros + 1):
        zr = find_zero_radii(p, traj, n_wanted=n, tol=tol)
        if not zr.complete:
            break
        traj = zr.trajectory
        R = zr.radii[-1]
        if R > C_B / p.kappa_tilde and mu_theta >= (z1 / R) ** 2:
            break
    else:
        zr = None
    if zr is None or not zr.complete:
        raise ConvergenceError(
            f"no qualifying zero radius within r <= {_zero_cap(p):.6g}"
        )
    A, k2, lam, e = p.A, p.k2, p.lam, traj.eps
    src = (lambda y: y) if p.linear else np.sinh

    def rhs(r, y, w):
        drag = A * w / (r + e) if A else 0.0 * w
        return w, lam - k2 * src(y) - drag

    r_start = traj.r[0]
    res_nontrivial = _defects(traj, rhs, r_start, R)
    yt = p.y_target
    res_trivial = abs(lam - k2 * float(src(yt)))
    yR = float(traj(R)[0])
    mask = traj.r <= R
    dev = float(np.max(np.abs(traj.y[mask] - yt)))
    return Certificate(
        problem=p,
        R=R,
        index=len(zr.radii),
        zero_radii=list(zr.radii),
        trivial_value=yt,
        nontrivial=traj,
        residual_trivial=res_trivial,
        residual_nontrivial=res_nontrivial,
        boundary_mismatch=abs(yR - yt),
        max_deviation=dev,
        mu_over_theta=mu_theta,
        lambda1_R=(z1 / R) ** 2,
        lambda1_first_zero=(z1 / zr.radii[0]) ** 2,
        z1=z1,
    )


def return_to_start(traj: Trajectory) -> tuple[float, float]:
    """For ``A = 0``: the second turning point ``w = 0`` and its distance to ``(c, 0)``.

    Closed level sets make the orbit come back to its start after one period.
    """
    w = traj.w
    idx = np.nonzero(np.sign(w[1:-1]) * np.sign(w[2:]) < 0)[0] + 1
    if idx.size < 2 or traj.sol is None:
        raise ConvergenceError("fewer than two turning points on the stored trajectory")
    i = idx[1]
    r = brentq(lambda s: float(traj.sol(s)[1]), traj.r[i], traj.r[i + 1], xtol=1e-13)
    y, w = traj.sol(r)
    return r, float(math.hypot(y - traj.problem.c, w))


def phase_portrait(p: RadialProblem, r: float = 1.0, y_range=(-3.0, 3.0), w_range=(-3.0, 3.0), n: int = 21):
    """Vector field ``(y', w')`` and ``H`` on an ``n x n`` grid at radius ``r``."""
    y, w = np.meshgrid(np.linspace(*y_range, n), np.linspace(*w_range, n), indexing="ij")
    drag = p.A * w / (r + p.epsilon_reg) if p.A else 0.0 * w
    dw = p.lam - p.k2 * p.source(y) - drag
    return y.ravel(), w.ravel(), w.ravel(), dw.ravel(), p.hamiltonian(y, w).ravel()
