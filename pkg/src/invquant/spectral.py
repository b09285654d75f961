"""One-body Hamiltonians, their spectra and the thermal position likelihood."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, as_coordinates
from .errors import NumericalError
from .lattice import Boundary, LatticeOperator, PotentialField, build_laplacian

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """``H = -(1/2m) Laplacian + v`` with its own wavefunction boundary."""

    mass: float
    potential: PotentialField
    wavefn_boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        object.__setattr__(self, "wavefn_boundary", Boundary(self.wavefn_boundary))

    @property
    def lattice(self):
        return self.potential.lattice


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Ascending energies and orbitals (columns) normalized with the cell measure."""

    energies: np.ndarray
    orbitals: np.ndarray
    lattice: object

    @property
    def n_levels(self):
        return self.energies.size

    @property
    def unit_vectors(self):
        """Orbitals rescaled to unit Euclidean norm."""
        return self.orbitals * np.sqrt(self.lattice.spacing)

    def degenerate_threshold(self, rel=1e-8):
        span = float(self.energies[-1] - self.energies[0]) if self.n_levels > 1 else 0.0
        return rel * max(span, np.finfo(float).tiny)


@dataclass(frozen=True, eq=False)
class ThermalEnsemble:
    beta: float
    weights: np.ndarray
    log_partition: float
    average_energy: float


def assemble_hamiltonian(spec):
    lat = spec.lattice.with_boundary(spec.wavefn_boundary)
    lap = build_laplacian(lat).matrix
    m = -lap / (2.0 * spec.mass) + np.diag(spec.potential.values)
    return LatticeOperator(m, spec.lattice)


def _fix_signs(vecs):
    # first component clearly away from zero is made positive
    scale = np.abs(vecs).max(axis=0)
    mask = np.abs(vecs) > 1e-8 * scale
    first = np.argmax(mask, axis=0)
    signs = np.sign(vecs[first, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def diagonalize(h):
    """Full symmetric eigendecomposition with a deterministic sign convention."""
    m = h.matrix
    try:
        energies, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    if not (np.all(np.isfinite(energies)) and np.all(np.isfinite(vecs))):
        raise NumericalError("eigensolver returned non-finite values")
    vecs = _fix_signs(vecs)
    orbitals = vecs / np.sqrt(h.lattice.spacing)
    energies.setflags(write=False)
    orbitals.setflags(write=False)
    return SpectralDecomposition(energies, orbitals, h.lattice)


def thermal_ensemble(spec, beta):
    """Canonical weights ``exp(-beta E) / Z`` evaluated with a log-sum-exp shift."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    e = spec.energies
    if np.isinf(beta):
        # ground state only; ties share the weight
        w = (e == e[0]).astype(float)
        w /= w.sum()
        return ThermalEnsemble(beta, w, -np.inf, float(e[0]))
    a = -beta * e
    amax = a.max()
    w = np.exp(a - amax)
    s = w.sum()
    w /= s
    w.setflags(write=False)
    return ThermalEnsemble(float(beta), w, float(amax + np.log(s)), float(w @ e))


def position_likelihood(spec, ens):
    """Thermal position density ``sum_a p_a |phi_a(x)|^2`` per unit length."""
    return (spec.orbitals**2) @ ens.weights


def log_likelihood(data, spec, ens):
    """Sum of ``ln p(x_i)`` over the data; ``-inf`` if some datum has zero density."""
    lat = spec.lattice
    idx = lat.index_of(as_coordinates(data))
    p = position_likelihood(spec, ens)[idx]
    if np.any(p <= 0):
        bad = int(np.flatnonzero(p <= 0)[0])
        log.warning("datum %d at x=%g has zero likelihood", bad, lat.x[idx[bad]])
        return -np.inf
    return float(np.log(p).sum())


def solve(mass, potential, beta, wavefn_boundary=Boundary.DIRICHLET):
    """Shortcut: diagonalize ``H(v)`` and build the ensemble at ``beta``."""
    spec = HamiltonianSpec(mass, potential, wavefn_boundary)
    dec = diagonalize(assemble_hamiltonian(spec))
    return dec, thermal_ensemble(dec, beta)


def reduce_two_body(m1, m2, pair_data):
    """Reduced mass and relative coordinates ``x1 - x2`` of pair measurements."""
    if not (m1 > 0 and m2 > 0):
        raise ValueError("masses must be positive")
    if isinstance(pair_data, Dataset):
        pairs = pair_data.samples
        beta, prov, seed = pair_data.beta, pair_data.provenance, pair_data.seed
        source = pair_data.source
    else:
        pairs = np.asarray(pair_data, dtype=float).reshape(-1, 2)
        beta, prov, seed, source = np.inf, "sampled", None, ""
    rel = Dataset(pairs[:, 0] - pairs[:, 1], "position", beta, prov, seed, source)
    return m1 * m2 / (m1 + m2), rel
