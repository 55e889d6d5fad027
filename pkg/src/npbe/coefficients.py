"""Dielectric tensor and Debye-Hueckel coefficient fields on a grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError
from .mesh import Grid, GridFunction

__all__ = ["CoefficientSet"]


def _nodal(grid: Grid, value) -> np.ndarray:
    if isinstance(value, GridFunction):
        return value.values
    if callable(value):
        value = value(*grid.coordinates)
    return np.broadcast_to(np.asarray(value, dtype=complex), grid.shape).copy()


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Coefficients of ``L u = -div(eps grad u) + kappa^2 u``.

    ``epsilon`` has shape ``grid.shape + (d, d)``; ``kappa_sq`` has shape
    ``grid.shape``.  ``theta`` and ``mu`` are the ellipticity and lower-bound
    constants extracted from the nodal data.
    """

    grid: Grid
    epsilon: np.ndarray = field(repr=False)
    kappa_sq: np.ndarray = field(repr=False)
    scalar: bool = False

    def __post_init__(self):
        d = self.grid.dimension
        eps = np.asarray(self.epsilon, dtype=complex)
        k2 = np.asarray(self.kappa_sq, dtype=complex)
        if eps.shape != self.grid.shape + (d, d):
            raise DomainError(f"epsilon must have shape {self.grid.shape + (d, d)}, got {eps.shape}")
        if k2.shape != self.grid.shape:
            raise DomainError(f"kappa_sq must have shape {self.grid.shape}, got {k2.shape}")
        if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(k2))):
            raise DomainError("coefficients must be finite")
        if not np.allclose(eps, np.swapaxes(eps, -1, -2), rtol=0, atol=1e-14):
            raise DomainError("epsilon must be symmetric (eps_ij = eps_ji)")
        eps.setflags(write=False)
        k2.setflags(write=False)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "kappa_sq", k2)

    @classmethod
    def from_scalar(cls, grid: Grid, epsilon=1.0, kappa_sq=0.0) -> "CoefficientSet":
        """Scalar dielectric ``eps * I``.  Values may be numbers, arrays or callables."""
        e = _nodal(grid, epsilon)
        eye = np.eye(grid.dimension)
        return cls(grid, e[..., None, None] * eye, _nodal(grid, kappa_sq), scalar=True)

    @classmethod
    def from_tensor(cls, grid: Grid, epsilon, kappa_sq=0.0) -> "CoefficientSet":
        d = grid.dimension
        if callable(epsilon):
            epsilon = epsilon(*grid.coordinates)
        eps = np.asarray(epsilon, dtype=complex)
        if eps.shape == (d, d):
            eps = np.broadcast_to(eps, grid.shape + (d, d)).copy()
        return cls(grid, eps, _nodal(grid, kappa_sq), scalar=False)

    def conj(self) -> "CoefficientSet":
        return CoefficientSet(self.grid, self.epsilon.conj(), self.kappa_sq.conj(), self.scalar)

    def scaled_kappa(self, factor: complex) -> "CoefficientSet":
        return CoefficientSet(self.grid, self.epsilon, self.kappa_sq * factor, self.scalar)

    @property
    def is_scalar(self) -> bool:
        if self.scalar:
            return True
        e = self.epsilon
        d = self.grid.dimension
        diag = np.einsum("...ii->...i", e)
        off = e - diag[..., :, None] * np.eye(d)
        return bool(np.all(off == 0) and np.all(diag == diag[..., :1]))

    @cached_property
    def theta(self) -> float:
        """Smallest eigenvalue over nodes of the symmetric part of Re(eps)."""
        a = self.epsilon.real
        herm = 0.5 * (a + np.swapaxes(a, -1, -2))
        return float(np.linalg.eigvalsh(herm).min())

    @cached_property
    def mu(self) -> float:
        return max(0.0, -float(self.kappa_sq.real.min()))

    @cached_property
    def kappa_sq_inf(self) -> float:
        return float(np.abs(self.kappa_sq).max())

    @cached_property
    def epsilon_inf(self) -> float:
        return float(np.abs(self.epsilon).max())

    @cached_property
    def epsilon_grad_inf(self) -> tuple[float, ...]:
        """Per-axis max of forward difference quotients of every entry of eps."""
        out = []
        for axis, h in enumerate(self.grid.spacing):
            dq = np.diff(self.epsilon, axis=axis) / h
            out.append(float(np.abs(dq).max()) if dq.size else 0.0)
        return tuple(out)

    @property
    def epsilon_w1inf(self) -> float:
        """``max(||eps||_inf, max_i ||d_i eps||_inf)`` over all tensor entries."""
        return max(self.epsilon_inf, *self.epsilon_grad_inf)
