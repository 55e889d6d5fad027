"""Independent reference solvers used only by the tests."""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from npbe import GridFunction
from npbe.linear_pbe import assemble_L
from npbe.mesh import discrete_norm


def newton_solve(coeffs, f, g, u0=None, tol=1e-13, max_iter=60):
    """Damped Newton for ``L_h u + kappa^2 (sinh u - u) = f`` with ``u = g`` on the boundary.

    Jacobian ``L_h + kappa^2 (cosh u - 1)``; step halving on the residual norm.
    """
    grid = coeffs.grid
    system = assemble_L(coeffs)
    I, B = grid.interior, grid.boundary
    k2 = coeffs.kappa_sq.ravel()[I]
    fI = (f.flat if isinstance(f, GridFunction) else np.broadcast_to(f, grid.size))[I]
    gB = np.broadcast_to(np.asarray(g, dtype=complex), B.shape) if np.ndim(g) <= 1 else g
    bc = system.coupling @ gB

    def F(x):
        return system.interior @ x + bc + k2 * (np.sinh(x) - x) - fI

    x = np.zeros(I.size, dtype=complex) if u0 is None else u0.flat[I].astype(complex)
    r = F(x)
    for _ in range(max_iter):
        J = system.interior + sp.diags(k2 * (np.cosh(x) - 1))
        dx = spla.spsolve(sp.csc_matrix(J), -r)
        t = 1.0
        while t > 1e-4:
            trial = x + t * dx
            rt = F(trial)
            if np.linalg.norm(rt) < np.linalg.norm(r) or np.linalg.norm(rt) == 0:
                break
            t /= 2
        x, r = trial, rt
        if np.linalg.norm(t * dx) <= tol * max(1.0, np.linalg.norm(x)):
            break
    out = np.empty(grid.size, dtype=complex)
    out[I], out[B] = x, gB
    return GridFunction(grid, out)


def random_in_ball(grid, radius, rng, fraction=None):
    """Smooth-ish random field with ``||u||_H2 = fraction * radius``."""
    x = grid.coordinates
    u = np.zeros(grid.shape, dtype=complex)
    for _ in range(3):
        k = rng.integers(1, 4, size=grid.dimension)
        c = rng.standard_normal() + 1j * rng.standard_normal()
        term = np.ones(grid.shape)
        for xi, ki in zip(x, k):
            term = term * np.sin(np.pi * ki * xi + rng.uniform(0, np.pi))
        u += c * term
    u = GridFunction(grid, u)
    frac = rng.uniform(0.05, 0.95) if fraction is None else fraction
    return u * (frac * radius / discrete_norm(u, "H2"))
