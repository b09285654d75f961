"""Classical-limit likelihood ``p(x) = exp(-beta v(x)) / Z_x`` and its MAP reconstruction."""

from __future__ import annotations

import math

import numpy as np

from .data import cell_counts
from .errors import LatticeMismatchError
from .lattice import PotentialField, as_values
from .optimizer import Evaluation, Parameterization, _n_data, iterate


def classical_likelihood(v, beta):
    """Boltzmann density over the lattice. Mass does not enter."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    lat = v.lattice
    a = -beta * (v.values - v.values.min())
    w = np.exp(a)
    return w / (w.sum() * lat.spacing)


def classical_log_partition(v, beta):
    lat = v.lattice
    vmin = v.values.min()
    return float(-beta * vmin + np.log(np.exp(-beta * (v.values - vmin)).sum() * lat.spacing))


class ClassicalProblem:
    """Posterior ``-beta sum v(x_i) - n ln Z_x + ln p0(v)`` of the classical model."""

    def __init__(self, beta, data, prior, lattice, parameterization=None):
        if not beta > 0 or math.isinf(beta):
            raise ValueError("beta must be positive and finite")
        if not prior.lattice.same_grid(lattice):
            raise LatticeMismatchError("prior and problem lattices differ")
        self.beta = float(beta)
        self.data = data
        self.prior = prior
        self.lattice = lattice
        self.counts = cell_counts(data, lattice) if _n_data(data) else np.zeros(lattice.n_points)
        self.parameterization = parameterization or Parameterization.interior(lattice)
        self.reference = prior.mean if hasattr(prior, "mean") else PotentialField.zeros(lattice)

    @property
    def n_data(self):
        return float(self.counts.sum())

    @property
    def gradient_scale(self):
        return max(1.0, self.n_data * self.beta)

    def evaluate(self, v):
        lat = self.lattice
        field_ = PotentialField(as_values(v, lat), lat)
        n = self.n_data
        ln_z = classical_log_partition(field_, self.beta)
        p = classical_likelihood(field_, self.beta)
        value = -self.beta * float(self.counts @ field_.values) - n * ln_z
        grad = -self.beta * self.counts / lat.spacing + n * self.beta * p
        pv, pg = self.prior.log_density(field_)
        occ = self.counts > 0
        pmin = float(p[occ].min()) if occ.any() else math.inf
        summary = {"lnZ": ln_z, "U": float(p @ field_.values * lat.spacing),
                   "E0": float(field_.values.min())}
        return Evaluation(value + pv, grad + pg, pmin, summary)

    def precision(self, v):
        return self.prior.precision(v)

    def curvature(self, v):
        """Exact negative Hessian of the data term, scaled like ``precision``."""
        lat = self.lattice
        p = classical_likelihood(PotentialField(as_values(v, lat), lat), self.beta)
        return self.n_data * self.beta**2 * (np.diag(p) - lat.spacing * np.outer(p, p))


def classical_map(problem, config):
    """Same step control and stopping contract as the quantum iteration."""
    return iterate(config, problem)
