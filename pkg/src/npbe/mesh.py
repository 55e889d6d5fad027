"""Domains, structured grids, grid functions and discrete norms.

Grids are node-centred tensor grids.  Interval and box domains occupy
``[0, L_1] x ... x [0, L_d]``; ball domains are embedded in the bounding
box ``[-R, R]^d`` and only nodes strictly inside the ball are treated as
interior (a staircase approximation, used for eigenvalue checks).
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError

__all__ = [
    "DomainKind",
    "DomainSpec",
    "Grid",
    "GridFunction",
    "domain_measures",
    "discrete_norm",
    "gagliardo_seminorm",
    "derivative",
    "second_derivative",
    "dirichlet_laplacian",
    "read_grid_function_csv",
]

GAGLIARDO_NODE_CAP = 5000


class DomainKind(str, enum.Enum):
    INTERVAL = "interval"
    BOX = "box"
    BALL = "ball"


@dataclass(frozen=True)
class DomainSpec:
    kind: DomainKind
    dimension: int
    extents: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        if self.dimension not in (1, 2, 3):
            raise DomainError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if any(not math.isfinite(e) or e <= 0 for e in self.extents):
            raise DomainError(f"extents must be finite and positive, got {self.extents}")
        if self.kind is DomainKind.INTERVAL and (self.dimension != 1 or len(self.extents) != 1):
            raise DomainError("an interval has dimension 1 and one extent")
        if self.kind is DomainKind.BOX and len(self.extents) != self.dimension:
            raise DomainError("a box needs one extent per axis")
        if self.kind is DomainKind.BALL and len(self.extents) != 1:
            raise DomainError("a ball is described by its radius alone")

    @classmethod
    def interval(cls, length: float = 1.0) -> "DomainSpec":
        return cls(DomainKind.INTERVAL, 1, (length,))

    @classmethod
    def box(cls, *lengths: float) -> "DomainSpec":
        return cls(DomainKind.BOX, len(lengths), tuple(lengths))

    @classmethod
    def ball(cls, radius: float = 1.0, dimension: int = 3) -> "DomainSpec":
        return cls(DomainKind.BALL, dimension, (radius,))

    @property
    def radius(self) -> float:
        if self.kind is not DomainKind.BALL:
            raise DomainError("only balls have a radius")
        return self.extents[0]

    @property
    def measure(self) -> float:
        if self.kind is DomainKind.BALL:
            d, r = self.dimension, self.radius
            return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d
        return math.prod(self.extents)

    @property
    def diameter(self) -> float:
        if self.kind is DomainKind.BALL:
            return 2.0 * self.radius
        return math.sqrt(sum(e * e for e in self.extents))

    @property
    def axis_lengths(self) -> tuple[float, ...]:
        if self.kind is DomainKind.BALL:
            return (2.0 * self.radius,) * self.dimension
        return self.extents

    @property
    def origin(self) -> tuple[float, ...]:
        if self.kind is DomainKind.BALL:
            return (-self.radius,) * self.dimension
        return (0.0,) * self.dimension


def domain_measures(d: DomainSpec) -> tuple[float, float]:
    """Return ``(|Omega|, diameter)``."""
    return d.measure, d.diameter


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    nodes_per_axis: tuple[int, ...]

    def __init__(self, domain: DomainSpec, nodes_per_axis: int | Sequence[int]):
        if isinstance(nodes_per_axis, (int, np.integer)):
            nodes_per_axis = (int(nodes_per_axis),) * domain.dimension
        nodes_per_axis = tuple(int(n) for n in nodes_per_axis)
        if len(nodes_per_axis) != domain.dimension:
            raise DomainError("need one node count per axis")
        if any(n < 3 for n in nodes_per_axis):
            raise DomainError(f"at least 3 nodes per axis are required, got {nodes_per_axis}")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "nodes_per_axis", nodes_per_axis)
        if not self.interior_mask.any():
            raise DomainError("grid has no interior node")

    def __repr__(self):
        return f"Grid({self.domain.kind.value}, dim={self.dimension}, nodes={self.nodes_per_axis})"

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes_per_axis

    @property
    def size(self) -> int:
        return math.prod(self.nodes_per_axis)

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.domain.axis_lengths, self.nodes_per_axis))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            o + h * np.arange(n)
            for o, h, n in zip(self.domain.origin, self.spacing, self.nodes_per_axis)
        )

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape :attr:`shape`, one per axis."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates as an ``(size, dimension)`` array in C order."""
        return np.stack([c.ravel() for c in self.coordinates], axis=1)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        for axis in range(self.dimension):
            idx = [slice(None)] * self.dimension
            idx[axis] = 0
            mask[tuple(idx)] = False
            idx[axis] = -1
            mask[tuple(idx)] = False
        if self.domain.kind is DomainKind.BALL:
            r2 = sum(c * c for c in self.coordinates)
            mask &= r2 < self.domain.radius**2 * (1 - 1e-12)
        mask.setflags(write=False)
        return mask

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask.ravel())

    @cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(~self.interior_mask.ravel())

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights, shape :attr:`shape`."""
        w = np.ones(self.shape)
        for axis, (n, h) in enumerate(zip(self.nodes_per_axis, self.spacing)):
            shape = [1] * self.dimension
            shape[axis] = n
            w = w * _trapezoid_weights(n, h).reshape(shape)
        if self.domain.kind is DomainKind.BALL:
            r2 = sum(c * c for c in self.coordinates)
            w = np.where(r2 <= self.domain.radius**2 * (1 + 1e-12), w, 0.0)
        w.setflags(write=False)
        return w

    def function(self, values) -> "GridFunction":
        return GridFunction(self, values)

    def evaluate(self, fn) -> "GridFunction":
        """Sample ``fn(*coordinates)`` on the nodes."""
        return GridFunction(self, np.broadcast_to(fn(*self.coordinates), self.shape))

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.shape, dtype=complex))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.size != self.grid.size:
            raise DomainError(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def norm(self, which: str = "L2") -> float:
        return discrete_norm(self, which)

    def _coerce(self, other):
        if isinstance(other, GridFunction):
            if other.grid is not self.grid:
                raise DomainError("grid functions live on different grids")
            return other.values
        if isinstance(other, np.ndarray) and other.ndim == 1 and other.size == self.grid.size:
            return other.reshape(self.grid.shape)
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def conj(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.conj())

    def with_boundary(self, boundary_values) -> "GridFunction":
        v = self.flat.copy()
        v[self.grid.boundary] = boundary_values
        return GridFunction(self.grid, v)

    def boundary_values(self) -> np.ndarray:
        return self.flat[self.grid.boundary].copy()

    def to_csv(self, target) -> None:
        """Write ``index, x[, y, z], re, im`` rows."""
        own = isinstance(target, (str, Path))
        fh = open(target, "w", newline="") if own else target
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", *"xyz"[: self.grid.dimension], "re", "im"])
            for i, (p, z) in enumerate(zip(self.grid.points, self.flat)):
                writer.writerow([i, *(_fmt(c) for c in p), _fmt(z.real), _fmt(z.imag)])
        finally:
            if own:
                fh.close()

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def read_grid_function_csv(path, grid: Grid) -> GridFunction:
    """Read a grid function written by :meth:`GridFunction.to_csv`."""
    values = np.full(grid.size, np.nan, dtype=complex)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            i = int(row["index"])
            if not 0 <= i < grid.size:
                raise DomainError(f"node index {i} out of range for {grid}")
            values[i] = complex(float(row["re"]), float(row["im"]))
    if np.isnan(values.real).any():
        raise DomainError(f"{path} does not cover every node of {grid}")
    return GridFunction(grid, values)


# -- difference quotients ---------------------------------------------------


def derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centred first difference, second-order one-sided at the ends."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def second_derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Three-point second difference; an end node takes the one-sided
    difference ``(v0 - 2 v1 + v2) / h^2`` built from itself and its two
    inward neighbours.

    The first-order end formula keeps ``||L_h^{-1}||`` in this norm close to
    its continuum value; the extrapolating second-order formula inflates it
    by roughly 50% through near-boundary data.
    """
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    out[0] = out[1]
    out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def _derivative_fields(u: GridFunction, order: int):
    g = u.grid
    v = u.values
    yield v
    if order >= 1:
        firsts = [derivative(v, h, a) for a, h in enumerate(g.spacing)]
        yield from firsts
    if order >= 2:
        for i in range(g.dimension):
            yield second_derivative(v, g.spacing[i], i)
            for j in range(i + 1, g.dimension):
                yield derivative(firsts[i], g.spacing[j], j)


_NORM_ORDER = {"L2": 0, "H1": 1, "H2": 2}


def discrete_norm(u: GridFunction, which: str = "L2") -> float:
    """Discrete L2, H1, H2 or Linf norm.

    Sobolev norms sum the weighted squares of every difference-quotient
    derivative ``d^alpha u`` with ``|alpha| <= k``, each multi-index once.
    """
    which = which.upper() if which.lower() != "linf" else "Linf"
    if which == "Linf":
        return float(np.max(np.abs(u.values)))
    if which not in _NORM_ORDER:
        raise ValueError(f"unknown norm {which!r}")
    w = u.grid.weights
    total = 0.0
    for d in _derivative_fields(u, _NORM_ORDER[which]):
        total += float(np.sum(w * (d.real**2 + d.imag**2)))
    return math.sqrt(total)


def h2_gram_matrix(grid: Grid) -> sp.csr_matrix:
    """Hermitian matrix ``G`` with ``u^H G u = ||u||_{H2,h}^2`` over all nodes."""
    n = grid.size
    eye = sp.identity(n, format="csr")
    ops = [eye]
    firsts = []
    for a, h in enumerate(grid.spacing):
        firsts.append(_axis_operator(grid, a, h, derivative))
    ops += firsts
    for i in range(grid.dimension):
        ops.append(_axis_operator(grid, i, grid.spacing[i], second_derivative))
        for j in range(i + 1, grid.dimension):
            ops.append(firsts[j] @ firsts[i])
    W = sp.diags(grid.weights.ravel())
    G = sum(D.T @ W @ D for D in ops)
    return sp.csr_matrix(G)


def _axis_operator(grid: Grid, axis: int, h: float, fn) -> sp.csr_matrix:
    n = grid.nodes_per_axis[axis]
    D1 = sp.csr_matrix(fn(np.eye(n), h, 0))
    mats = [sp.identity(m, format="csr") for m in grid.nodes_per_axis]
    mats[axis] = D1
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def gagliardo_seminorm(u: GridFunction, s_prime: float, node_cap: int = GAGLIARDO_NODE_CAP) -> float:
    """Brute-force quadrature of the Gagliardo seminorm ``[u]_{s'}``."""
    if not 0 < s_prime < 1:
        raise ValueError(f"s' must lie in (0, 1), got {s_prime}")
    g = u.grid
    if g.size > node_cap:
        raise DomainError(f"{g.size} nodes exceed the double-sum cap of {node_cap}")
    x = g.points
    w = g.weights.ravel()
    v = u.flat
    expo = (g.dimension + 2 * s_prime) / 2
    total = 0.0
    block = max(1, 2_000_000 // g.size)
    for start in range(0, g.size, block):
        stop = min(start + block, g.size)
        diff = x[start:stop, None, :] - x[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        num = np.abs(v[start:stop, None] - v[None, :]) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            kern = np.where(r2 > 0, num / r2**expo, 0.0)
        total += float(w[start:stop] @ kern @ w)
    return math.sqrt(total)


def dirichlet_laplacian(grid: Grid) -> sp.csc_matrix:
    """Standard ``2d+1``-point stencil for ``-Laplace`` on interior nodes."""
    shape = grid.shape
    n = grid.size
    idx = np.arange(n).reshape(shape)
    interior = grid.interior
    pos = np.full(n, -1)
    pos[interior] = np.arange(interior.size)
    rows, cols, vals = [], [], []
    diag = np.zeros(interior.size)
    for axis, h in enumerate(grid.spacing):
        for step in (-1, 1):
            nb = np.roll(idx, -step, axis=axis).ravel()[interior]
            diag += 1.0 / h**2
            inner = pos[nb] >= 0
            rows.append(np.arange(interior.size)[inner])
            cols.append(pos[nb][inner])
            vals.append(np.full(inner.sum(), -1.0 / h**2))
    rows.append(np.arange(interior.size))
    cols.append(np.arange(interior.size))
    vals.append(diag)
    m = interior.size
    return sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    )
