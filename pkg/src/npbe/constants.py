"""Explicit constants: principal eigenvalue, Sobolev/elliptic-regularity
bounds, the admissible radius ``M0`` and the fixed-point smallness tests.

All bounds are floating-point evaluations of closed forms, not interval
arithmetic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .coefficients import CoefficientSet
from .errors import ConvergenceError, DomainError, HypothesisViolation
from .mesh import DomainSpec, Grid, dirichlet_laplacian

__all__ = [
    "EmbeddingConstants",
    "ConstantsReport",
    "Conditions",
    "lambda1_estimate",
    "principal_dirichlet_pair",
    "embedding_constants",
    "best_embedding",
    "sobolev_constant",
    "cd_bound",
    "ch_bound_scalar",
    "ch_bound_tensor",
    "ch_bound",
    "m0_and_conditions",
    "schauder_lhs",
    "schauder_lhs_derivative",
    "contraction_factor",
    "admissible_m0",
    "select_radius",
    "build_report",
    "sinh_minus_id",
    "cosh_minus_one",
]

P_GRID = tuple(round(3.1 + 0.1 * k, 10) for k in range(29))  # 3.1, ..., 5.9


# -- elementary closed forms -------------------------------------------------


def sinh_minus_id(x: float) -> float:
    """``sinh(x) - x`` without cancellation for small ``x``."""
    if abs(x) < 0.5:
        term, total, k = x**3 / 6.0, 0.0, 3
        while abs(term) > 1e-18 * abs(total) or total == 0.0:
            total += term
            term *= x * x / ((k + 1) * (k + 2))
            k += 2
            if term == 0.0:
                break
        return total
    return math.sinh(x) - x


def cosh_minus_one(x: float) -> float:
    return 2.0 * math.sinh(0.5 * x) ** 2


def _acosh1p(q: float) -> float:
    """``acosh(1 + q)`` accurate for small ``q``."""
    return math.log1p(q + math.sqrt(q * (2.0 + q)))


# -- principal eigenvalue ------------------------------------------------------


class Lambda1(NamedTuple):
    value: float
    lower_bound: float


ITERATIVE_EIGEN_THRESHOLD = 20_000


def principal_dirichlet_pair(grid: Grid, rtol: float = 1e-10, max_iter: int = 10_000):
    """Inverse power iteration for the smallest eigenpair of ``-Laplace_h``.

    Returns ``(lambda, v)`` with ``v`` on the interior nodes, unit Euclidean
    norm, positive sum.
    """
    A = dirichlet_laplacian(grid)
    if A.shape[0] > ITERATIVE_EIGEN_THRESHOLD:
        # SPD system: warm-started CG beats fill-in heavy LU on large 3-D grids
        def inverse(x):
            y, info = spla.cg(A, x, x0=x, rtol=1e-13, maxiter=10 * A.shape[0])
            if info != 0:
                raise ConvergenceError(f"CG inner solve failed (info={info})")
            return y
    else:
        inverse = spla.splu(A).solve
    v = np.ones(A.shape[0])
    v /= np.linalg.norm(v)
    lam = float(v @ (A @ v))
    for _ in range(max_iter):
        v = inverse(v)
        v /= np.linalg.norm(v)
        new = float(v @ (A @ v))
        if abs(new - lam) <= rtol * abs(new):
            lam = new
            break
        lam = new
    else:
        raise ConvergenceError(f"inverse iteration did not converge in {max_iter} steps")
    if v.sum() < 0:
        v = -v
    return lam, v


def payne_weinberger_ok(lam: Lambda1, grid: Grid) -> bool:
    """``lambda1 >= pi^2 / diam^2`` up to the stencil's own undershoot.

    The bound is attained by an interval, where the 3-point eigenvalue
    ``(4/h^2) sin^2(pi h / 2L)`` sits below ``pi^2 / L^2`` by the factor
    ``sin^2(x)/x^2 >= 1 - x^2/3``; that factor (with the coarsest spacing)
    is allowed for.
    """
    x = math.pi * max(grid.spacing) / (2 * grid.domain.diameter)
    return lam.value >= lam.lower_bound * (1 - x * x / 3) * (1 - 1e-9)


def lambda1_estimate(grid: Grid, rtol: float = 1e-10, max_iter: int = 10_000) -> Lambda1:
    """Discrete principal Dirichlet eigenvalue and the convex-domain lower
    bound ``pi^2 / diam^2``."""
    lam, _ = principal_dirichlet_pair(grid, rtol, max_iter)
    return Lambda1(lam, math.pi**2 / grid.domain.diameter**2)


# -- Sobolev embedding H^2 -> L^inf in three dimensions ---------------------------


@dataclass(frozen=True)
class EmbeddingConstants:
    p: float
    D2p: float
    C2p: float
    Dpinf: float
    Cpinf: float
    C_S_upper: float
    C_S_lower: float


def _embedding(measure: float, diam: float, p: float) -> EmbeddingConstants:
    if not 3 < p < 6:
        raise ValueError(f"p must lie in (3, 6), got {p}")
    G = math.gamma
    a = 3 * (p + 2) / (4 * p)
    D2p = (
        diam ** (1 + 3 * (p + 2) / (2 * p))
        * math.pi**a
        / (3 * measure)
        * G(3 * (p - 2) / (4 * p))
        / G(a)
        * math.sqrt(G(3 / p) / G(3 * (p - 1) / p))
        * (4 / math.sqrt(math.pi)) ** ((p - 2) / (2 * p))
    )
    C2p = math.sqrt(2) * max(measure ** (1 / p - 0.5), D2p)
    q = p / (p - 1)
    # || |x|^-2 ||_{L^q(B(0, diam))}, finite because 3 - 2q > 0 for p > 3
    radial = (4 * math.pi / (3 - 2 * q)) ** (1 / q) * diam ** ((3 - 2 * q) / q)
    Dpinf = diam**3 / (3 * measure) * radial
    Cpinf = 2 ** (1 - 1 / p) * max(measure ** (-1 / p), Dpinf)
    upper = 2 ** (1 / p) * C2p * Cpinf
    return EmbeddingConstants(p, D2p, C2p, Dpinf, Cpinf, upper, measure**-0.5)


def embedding_constants(domain: DomainSpec, p: float = 4.0) -> EmbeddingConstants:
    """Bracket ``|Omega|^{-1/2} <= C_S(2) <= 2^{1/p} C_{2,p} C_{p,inf}`` for a
    convex three-dimensional domain."""
    if domain.dimension != 3:
        raise DomainError("the H^2 -> L^inf bracket is stated for three-dimensional domains")
    return _embedding(domain.measure, domain.diameter, p)


def best_embedding(domain: DomainSpec, p_grid: Sequence[float] = P_GRID) -> EmbeddingConstants:
    """The ``p`` on ``p_grid`` minimising ``C_S_upper``."""
    return min((embedding_constants(domain, p) for p in p_grid), key=lambda e: e.C_S_upper)


def sobolev_constant(domain: DomainSpec, p_grid: Sequence[float] = P_GRID) -> EmbeddingConstants:
    """``C_S`` bracket for any dimension.

    Lower-dimensional domains are lifted to the convex cylinder
    ``Omega x (0, t)^{3-d}``: extending ``u`` constantly in the new directions
    keeps ``||u||_inf`` and multiplies ``||u||_{H^2}`` by ``t^{(3-d)/2}``, so
    ``C_S(Omega) <= t^{(3-d)/2} C_S(cylinder)``, minimised over ``t``.
    """
    if domain.dimension == 3:
        return best_embedding(domain, p_grid)
    k = 3 - domain.dimension
    meas, diam = domain.measure, domain.diameter
    best = None
    for t in diam * np.geomspace(1e-2, 1e2, 161):
        m3 = meas * t**k
        d3 = math.sqrt(diam**2 + k * t**2)
        for p in p_grid:
            e = _embedding(m3, d3, p)
            upper = t ** (k / 2) * e.C_S_upper
            if best is None or upper < best[0]:
                best = (upper, e)
    upper, e = best
    return EmbeddingConstants(e.p, e.D2p, e.C2p, e.Dpinf, e.Cpinf, upper, meas**-0.5)


# -- operator bounds ---------------------------------------------------------------


def cd_bound(coeffs: CoefficientSet, dimension: int | None = None) -> float:
    """Upper bound ``2 d^2 ||eps||_{W^{1,inf}} + ||kappa^2||_inf`` on ``||L||``."""
    d = coeffs.grid.dimension if dimension is None else dimension
    return 2 * d * d * coeffs.epsilon_w1inf + coeffs.kappa_sq_inf


def _coercivity_gap(coeffs: CoefficientSet, lambda1: float) -> float:
    gap = coeffs.theta * lambda1 - coeffs.mu
    if coeffs.theta <= 0 or gap <= 0:
        raise HypothesisViolation(
            f"need theta > 0 and theta*lambda1 - mu > 0; got theta={coeffs.theta:.6g}, "
            f"mu={coeffs.mu:.6g}, lambda1={lambda1:.6g}"
        )
    return gap


def ch_bound_scalar(coeffs: CoefficientSet, lambda1: float, dimension: int | None = None) -> float:
    """Fourier-based bound on ``||L^{-1}||_{L^2 -> H^2}`` for scalar ``eps``."""
    d = coeffs.grid.dimension if dimension is None else dimension
    gap = _coercivity_gap(coeffs, lambda1)
    c1 = (1 + lambda1 ** (2 / 3)) ** 1.5 / lambda1
    grad = max(coeffs.epsilon_grad_inf)
    return c1 / coeffs.theta * (1 + (coeffs.kappa_sq_inf + math.sqrt(d) * grad * math.sqrt(lambda1)) / gap)


def ch_bound_tensor(
    coeffs: CoefficientSet,
    lambda1: float,
    dimension: int | None = None,
    N_omega: int = 1,
    grad_zeta_inf: float | None = None,
) -> float:
    """Difference-quotient bound on ``||L^{-1}||`` for tensor ``eps``.

    ``N_omega`` (covering number) and ``grad_zeta_inf`` (cut-off slope,
    default ``2 / diam``) are caller choices.
    """
    d = coeffs.grid.dimension if dimension is None else dimension
    if int(N_omega) != N_omega or N_omega < 1:
        raise ValueError(f"N_omega must be a positive integer, got {N_omega}")
    gap = _coercivity_gap(coeffs, lambda1)
    theta = coeffs.theta
    gz = 2.0 / coeffs.grid.domain.diameter if grad_zeta_inf is None else grad_zeta_inf
    e = coeffs.epsilon_w1inf
    c1 = e * (gz + 0.5)
    delta = theta / (2 * c1)
    c2 = e * (2 * gz + (1 + 2 * gz) / (2 * delta))
    c0 = (4 / theta) * (
        (2 / theta) * (1 + coeffs.kappa_sq_inf / gap) ** 2 + lambda1 * (c2 + theta * gz**2) / gap**2
    )
    return N_omega * math.sqrt(((1 + lambda1) / gap) ** 2 + d * c0)


def ch_bound(coeffs: CoefficientSet, lambda1: float, N_omega: int = 1, grad_zeta_inf=None) -> float:
    """Scalar bound when ``eps`` is a multiple of the identity, tensor bound otherwise."""
    if coeffs.is_scalar:
        return ch_bound_scalar(coeffs, lambda1)
    return ch_bound_tensor(coeffs, lambda1, N_omega=N_omega, grad_zeta_inf=grad_zeta_inf)


# -- smallness conditions ----------------------------------------------------------


class Conditions(NamedTuple):
    M0: float
    schauder_ok: bool
    banach_ok: bool
    margin: float
    gamma: float


def _nonlinear_scale(C_H, kappa_sq_inf, measure):
    return C_H * kappa_sq_inf * math.sqrt(measure)


def _scaled(scale: float, fn, x: float) -> float:
    """``scale * fn(x)`` with overflow mapped to ``inf`` and ``0 * fn = 0``."""
    if scale == 0:
        return 0.0
    try:
        return scale * fn(x)
    except OverflowError:
        return math.inf


def schauder_lhs(M, C_S, C_H, C_D, kappa_sq_inf, measure, f_norm=0.0, w_h2_norm=0.0) -> float:
    """Self-map bound ``F(M)`` on the radius-``M`` ball (sinh closed form)."""
    data = C_H * f_norm + (C_H * C_D + 1) * w_h2_norm
    return data + _scaled(_nonlinear_scale(C_H, kappa_sq_inf, measure), sinh_minus_id, C_S * M)


def schauder_lhs_derivative(M, C_S, C_H, kappa_sq_inf, measure) -> float:
    return _scaled(_nonlinear_scale(C_H, kappa_sq_inf, measure) * C_S, cosh_minus_one, C_S * M)


def contraction_factor(M, C_S, C_H, kappa_sq_inf, measure) -> float:
    """Lipschitz bound of the fixed-point map on the radius-``M`` ball."""
    return _scaled(C_H * C_S * kappa_sq_inf * math.sqrt(measure), cosh_minus_one, C_S * M)


def admissible_m0(C_S, C_H, kappa_sq_inf, measure) -> float:
    scale = _nonlinear_scale(C_H, kappa_sq_inf, measure) * C_S
    if scale == 0:
        return math.inf
    return _acosh1p(1.0 / scale) / C_S


def m0_and_conditions(
    C_S_upper: float,
    C_H_bound: float,
    C_D_bound: float,
    kappa_sq_inf: float,
    measure: float,
    f_norm: float,
    w_h2_norm: float,
    M: float,
) -> Conditions:
    if M <= 0:
        raise ValueError("M must be positive")
    M0 = admissible_m0(C_S_upper, C_H_bound, kappa_sq_inf, measure)
    lhs = schauder_lhs(M, C_S_upper, C_H_bound, C_D_bound, kappa_sq_inf, measure, f_norm, w_h2_norm)
    gamma = contraction_factor(M, C_S_upper, C_H_bound, kappa_sq_inf, measure)
    return Conditions(M0, lhs <= M, gamma < 1.0, M - lhs, gamma)


def select_radius(C_S, C_H, C_D, kappa_sq_inf, measure, f_norm, w_h2_norm, samples: int = 400):
    """Smallest ``M`` on a uniform scan of ``(0, M0)`` passing the self-map
    test, or ``None`` when the data are too large."""
    M0 = admissible_m0(C_S, C_H, kappa_sq_inf, measure)
    if not math.isfinite(M0):
        # no nonlinearity: any M above the data bound works
        lhs = schauder_lhs(0.0, C_S, C_H, C_D, kappa_sq_inf, measure, f_norm, w_h2_norm)
        return lhs if lhs > 0 else 1.0
    for k in range(1, samples):
        M = M0 * k / samples
        if schauder_lhs(M, C_S, C_H, C_D, kappa_sq_inf, measure, f_norm, w_h2_norm) <= M:
            return M
    return None


# -- report --------------------------------------------------------------------


_KINDS = {
    "lambda1": "estimate",
    "C_H_probe": "estimate",
    "lambda1_ratio": "estimate",
    "schauder_ok": "verdict",
    "banach_ok": "verdict",
    "payne_weinberger_ok": "verdict",
    "h3_ok": "verdict",
}


@dataclass
class ConstantsReport:
    lambda1: float
    lambda1_lower: float
    C_S_lower: float
    C_S_upper: float
    C_D_bound: float
    C_H_bound: float
    C_H_probe: float
    M0: float
    schauder_ok: bool
    banach_ok: bool
    margin: float
    # context
    measure: float = math.nan
    diameter: float = math.nan
    p: float = math.nan
    N_omega: int = 1
    grad_zeta_inf: float = math.nan
    C_H_tensor_bound: float = math.nan
    theta: float = math.nan
    mu: float = math.nan
    kappa_sq_inf: float = math.nan
    h3_ok: bool = False
    payne_weinberger_ok: bool = False
    lambda1_ratio: float = math.nan
    M: float = math.nan
    gamma: float = math.nan
    f_norm: float = 0.0
    w_h2_norm: float = 0.0
    extra: dict = field(default_factory=dict)

    def items(self):
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return d.items()

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items())

    def write_text(self, path) -> None:
        Path(path).write_text(self.to_text())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "value", "kind"])
            for k, v in self.items():
                w.writerow([k, _fmt(v), _KINDS.get(k, "bound")])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def build_report(
    grid: Grid,
    coeffs: CoefficientSet,
    f_norm: float = 0.0,
    w_h2_norm: float = 0.0,
    M: float | None = None,
    p: float | None = None,
    N_omega: int = 1,
    grad_zeta_inf: float | None = None,
    C_H_probe: float = math.nan,
    lambda1: Lambda1 | None = None,
) -> ConstantsReport:
    """Evaluate every constant and both smallness verdicts for one problem.

    With ``M=None`` the smallest admissible radius from :func:`select_radius`
    is used (falling back to ``M0 / 2`` when none exists).
    """
    dom = grid.domain
    lam = lambda1 or lambda1_estimate(grid)
    if p is None:
        emb = sobolev_constant(dom)
    elif dom.dimension == 3:
        emb = embedding_constants(dom, p)
    else:
        emb = sobolev_constant(dom, (p,))
    gz = 2.0 / dom.diameter if grad_zeta_inf is None else grad_zeta_inf
    C_D = cd_bound(coeffs)
    C_H = ch_bound(coeffs, lam.value, N_omega=N_omega, grad_zeta_inf=gz)
    C_H_t = ch_bound_tensor(coeffs, lam.value, N_omega=N_omega, grad_zeta_inf=gz)
    k2 = coeffs.kappa_sq_inf
    if M is None:
        M = select_radius(emb.C_S_upper, C_H, C_D, k2, dom.measure, f_norm, w_h2_norm)
        if M is None:
            M = 0.5 * admissible_m0(emb.C_S_upper, C_H, k2, dom.measure)
    cond = m0_and_conditions(emb.C_S_upper, C_H, C_D, k2, dom.measure, f_norm, w_h2_norm, M)
    return ConstantsReport(
        lambda1=lam.value,
        lambda1_lower=lam.lower_bound,
        C_S_lower=emb.C_S_lower,
        C_S_upper=emb.C_S_upper,
        C_D_bound=C_D,
        C_H_bound=C_H,
        C_H_probe=C_H_probe,
        M0=cond.M0,
        schauder_ok=cond.schauder_ok,
        banach_ok=cond.banach_ok,
        margin=cond.margin,
        measure=dom.measure,
        diameter=dom.diameter,
        p=emb.p,
        N_omega=N_omega,
        grad_zeta_inf=gz,
        C_H_tensor_bound=C_H_t,
        theta=coeffs.theta,
        mu=coeffs.mu,
        kappa_sq_inf=k2,
        h3_ok=coeffs.mu / coeffs.theta < lam.value,
        payne_weinberger_ok=payne_weinberger_ok(lam, grid),
        lambda1_ratio=lam.value * dom.diameter**2,
        M=M,
        gamma=cond.gamma,
        f_norm=f_norm,
        w_h2_norm=w_h2_norm,
    )
