"""Uniform one-dimensional lattices and the linear operators acting on them.

All integrals over the lattice carry the cell measure ``spacing``, so a
density ``p`` is normalized when ``p.sum() * spacing == 1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, LatticeMismatchError

MAX_LAPLACIAN_POWER = 8


class Boundary(str, enum.Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Lattice:
    """Uniform grid ``x_j = origin + j * spacing``, ``j = 0 .. n_points - 1``."""

    n_points: int
    spacing: float = 1.0
    origin: float = 0.0
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if int(self.n_points) != self.n_points or self.n_points < 3:
            raise ValueError(f"n_points must be an integer >= 3, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError(f"spacing must be positive and finite, got {self.spacing}")
        if not math.isfinite(self.origin):
            raise ValueError("origin must be finite")

    @classmethod
    def centered(cls, n_points, spacing=1.0, boundary=Boundary.DIRICHLET):
        """Lattice symmetric about x = 0."""
        return cls(n_points, spacing, -0.5 * (n_points - 1) * spacing, boundary)

    @property
    def length(self):
        return self.n_points * self.spacing

    @property
    def x(self):
        return self.origin + self.spacing * np.arange(self.n_points)

    @property
    def midpoint(self):
        return self.origin + 0.5 * (self.n_points - 1) * self.spacing

    def with_boundary(self, boundary):
        return Lattice(self.n_points, self.spacing, self.origin, Boundary(boundary))

    def same_grid(self, other):
        """Same points; boundary tags may differ."""
        return (
            self.n_points == other.n_points
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def index_of(self, coords):
        """Snap coordinates to the nearest cell index.

        Raises DomainError for points further than half a cell outside the grid.
        """
        c = np.asarray(coords, dtype=float)
        j = np.rint((c - self.origin) / self.spacing)
        bad = (j < 0) | (j > self.n_points - 1) | ~np.isfinite(c)
        if np.any(bad):
            first = np.flatnonzero(np.ravel(bad))[0]
            raise DomainError(
                f"coordinate {np.ravel(c)[first]!r} (datum {first}) lies outside "
                f"[{self.x[0]}, {self.x[-1]}]"
            )
        return j.astype(np.int64)

    def mirror_index(self):
        """Index map of the reflection about the lattice midpoint."""
        return np.arange(self.n_points)[::-1].copy()


@dataclass(frozen=True, eq=False)
class LatticeOperator:
    """Dense real matrix acting on lattice functions by ``(M f)_i = sum_j M_ij f_j``."""

    matrix: np.ndarray
    lattice: Lattice
    symmetric: bool = True

    def __post_init__(self):
        m = _frozen(self.matrix)
        n = self.lattice.n_points
        if m.shape != (n, n):
            raise LatticeMismatchError(f"operator shape {m.shape} does not match lattice ({n})")
        if self.symmetric:
            scale = max(1.0, float(np.abs(m).max()))
            if np.abs(m - m.T).max() > 1e-12 * scale:
                raise ValueError("matrix flagged symmetric is not symmetric")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other):
        if isinstance(other, LatticeOperator):
            _check_same(self.lattice, other.lattice)
            return LatticeOperator(self.matrix @ other.matrix, self.lattice,
                                   self.symmetric and other.symmetric and other is self)
        if isinstance(other, PotentialField):
            _check_same(self.lattice, other.lattice)
            return PotentialField(self.matrix @ other.values, other.lattice)
        return self.matrix @ np.asarray(other)

    def __add__(self, other):
        _check_same(self.lattice, other.lattice)
        return LatticeOperator(self.matrix + other.matrix, self.lattice,
                               self.symmetric and other.symmetric)

    def __mul__(self, scalar):
        return LatticeOperator(self.matrix * float(scalar), self.lattice, self.symmetric)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def eigvalsh(self):
        return np.linalg.eigvalsh(self.matrix)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Real function on a lattice (potentials, references, reconstructions)."""

    values: np.ndarray
    lattice: Lattice = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.lattice.n_points,):
            raise LatticeMismatchError(
                f"field has shape {v.shape}, lattice has {self.lattice.n_points} points"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("potential values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, lattice, fn):
        return cls(np.asarray(fn(lattice.x), dtype=float) * np.ones(lattice.n_points), lattice)

    @classmethod
    def zeros(cls, lattice):
        return cls(np.zeros(lattice.n_points), lattice)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __add__(self, other):
        if isinstance(other, PotentialField):
            _check_same(self.lattice, other.lattice)
            other = other.values
        return PotentialField(self.values + other, self.lattice)

    def __sub__(self, other):
        if isinstance(other, PotentialField):
            _check_same(self.lattice, other.lattice)
            other = other.values
        return PotentialField(self.values - other, self.lattice)

    def __mul__(self, scalar):
        return PotentialField(self.values * float(scalar), self.lattice)

    __rmul__ = __mul__

    def __len__(self):
        return self.lattice.n_points


def _check_same(a, b):
    if not a.same_grid(b):
        raise LatticeMismatchError(f"lattice mismatch: {a} vs {b}")


def as_values(f, lattice):
    """Values of ``f`` (field or array) after checking it lives on ``lattice``."""
    if isinstance(f, PotentialField):
        _check_same(f.lattice, lattice)
        return f.values
    v = np.asarray(f, dtype=float)
    if v.shape != (lattice.n_points,):
        raise LatticeMismatchError(f"expected {lattice.n_points} values, got shape {v.shape}")
    return v


def identity_operator(lattice):
    return LatticeOperator(np.eye(lattice.n_points), lattice)


def build_laplacian(lattice):
    """Second-order central-difference Laplacian scaled by ``1 / spacing**2``.

    Dirichlet rows drop the out-of-domain neighbour; periodic rows wrap.
    """
    n = lattice.n_points
    m = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    if lattice.boundary is Boundary.PERIODIC:
        m[0, -1] += 1.0
        m[-1, 0] += 1.0
    return LatticeOperator(m / lattice.spacing**2, lattice)


def build_iterated_laplacian(lattice, k):
    if int(k) != k or k < 0:
        raise ValueError(f"k must be a non-negative integer, got {k}")
    if k > MAX_LAPLACIAN_POWER:
        raise ValueError(f"iterated Laplacian power {k} exceeds guard {MAX_LAPLACIAN_POWER}")
    lap = build_laplacian(lattice).matrix
    m = np.linalg.matrix_power(lap, int(k))
    # powers of a symmetric matrix are symmetric; remove roundoff asymmetry
    return LatticeOperator(0.5 * (m + m.T), lattice)


def truncated_rbf_coefficients(sigma_rbf):
    """Coefficients ``sigma^(2k) / (k! 2^k)`` of ``(-Laplacian)^k``, k = 0..3."""
    s2 = float(sigma_rbf) ** 2
    return np.array([(s2 / 2.0) ** k / math.factorial(k) for k in range(4)])


def build_truncated_rbf(lattice, sigma_rbf):
    """Inverse covariance ``sum_k sigma^(2k)/(k! 2^k) (-1)^k Laplacian^k`` for k <= 3."""
    if not sigma_rbf > 0:
        raise ValueError("sigma_rbf must be positive")
    coef = truncated_rbf_coefficients(sigma_rbf)
    m = np.zeros((lattice.n_points, lattice.n_points))
    for k, c in enumerate(coef):
        m += c * (-1) ** k * build_iterated_laplacian(lattice, k).matrix
    return LatticeOperator(0.5 * (m + m.T), lattice)


def quadratic_form(op, f, g):
    """Discrete ``<f|op|g> = sum_ij f_i op_ij g_j * spacing``."""
    lat = op.lattice
    fv = as_values(f, lat)
    gv = as_values(g, lat)
    return float(fv @ op.matrix @ gv) * lat.spacing


def reflection_operator(lattice):
    """Permutation matrix of ``x -> 2 * midpoint - x``."""
    n = lattice.n_points
    m = np.zeros((n, n))
    m[np.arange(n), lattice.mirror_index()] = 1.0
    return LatticeOperator(m, lattice)


def translation_operator(lattice, shift=1):
    """Cyclic shift by ``shift`` cells, ``(S f)_j = f_{j - shift}``. Not symmetric."""
    n = lattice.n_points
    m = np.zeros((n, n))
    m[(np.arange(n) + shift) % n, np.arange(n)] = 1.0
    return LatticeOperator(m, lattice, symmetric=False)
