"""Log-prior densities over lattice potentials and their gradients.

Every prior exposes ``log_density(v) -> (value, gradient_values)`` and
``precision(v) -> matrix`` (the inverse covariance acting at ``v``, used as
iteration matrix). Values are defined up to a ``v``-independent constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LatticeMismatchError, NumericalError
from .gradients import GradientField
from .lattice import LatticeOperator, PotentialField, as_values, quadratic_form

_TWO_PI = 2.0 * np.pi


def _psd_spectrum(op):
    ev = np.linalg.eigvalsh(op.matrix)
    radius = max(np.abs(ev).max(), np.finfo(float).tiny)
    if ev.min() < -1e-9 * radius:
        raise ValueError(f"operator is not positive semi-definite (min eigenvalue {ev.min():.3e})")
    return ev, radius


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """``p0(v) ~ exp(-(lambda/2) <v - v0|K0|v - v0>)``."""

    mean: PotentialField
    inv_covariance: LatticeOperator
    scale: float = 1.0
    _eigs: np.ndarray = field(init=False, repr=False)
    zero_modes: int = field(init=False)

    def __post_init__(self):
        if not self.scale >= 0:
            raise ValueError("scale must be non-negative")
        if not self.mean.lattice.same_grid(self.inv_covariance.lattice):
            raise LatticeMismatchError("prior mean and operator live on different lattices")
        ev, radius = _psd_spectrum(self.inv_covariance)
        nonzero = ev > 1e-10 * radius
        object.__setattr__(self, "_eigs", ev[nonzero])
        object.__setattr__(self, "zero_modes", int((~nonzero).sum()))

    @property
    def lattice(self):
        return self.mean.lattice

    def log_normalizer(self):
        """``ln det(lambda h K0 / 2 pi)^(1/2)`` over the non-null modes."""
        if self.scale == 0:
            return 0.0
        h = self.lattice.spacing
        return 0.5 * float(np.log(self.scale * h * self._eigs / _TWO_PI).sum())

    def log_density(self, v):
        value, grad = gaussian_log_density(self, v)
        return value, grad.values

    def precision(self, v=None):
        return self.scale * self.inv_covariance.matrix


def gaussian_log_density(prior, v):
    """Value ``-(lambda/2) <v-v0|K0|v-v0>`` (normalization omitted) and gradient."""
    lat = prior.lattice
    d = as_values(v, lat) - prior.mean.values
    kd = prior.inv_covariance.matrix @ d
    value = -0.5 * prior.scale * float(d @ kd) * lat.spacing
    return value, GradientField(-prior.scale * kd, lat)


@dataclass(frozen=True, eq=False)
class MixturePrior:
    """Mixture ``sum_k p(k) exp(-(lambda/2) <v-v_k|K_k|v-v_k>) / Z_k`` with shared lambda."""

    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if len(comps) < 1 or len(comps) != w.size:
            raise ValueError("need one weight per component and at least one component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        lam = comps[0].scale
        if any(c.scale != lam for c in comps):
            raise ValueError("mixture components must share one scale lambda")
        lat = comps[0].lattice
        if any(not c.lattice.same_grid(lat) for c in comps):
            raise LatticeMismatchError("mixture components live on different lattices")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def scale(self):
        return self.components[0].scale

    @property
    def lattice(self):
        return self.components[0].lattice

    def component_log_densities(self, v):
        """``ln p(k) + ln(1/Z_k) - (lambda/2) d_k`` relative to component 0's normalizer."""
        ref = self.components[0].log_normalizer()
        out = np.empty(len(self.components))
        for k, c in enumerate(self.components):
            value, _ = gaussian_log_density(c, v)
            out[k] = np.log(self.weights[k]) + (c.log_normalizer() - ref) + value
        return out

    def responsibilities(self, v):
        return mixture_log_density(self, v)[2]

    def log_density(self, v):
        value, grad, _ = mixture_log_density(self, v)
        return value, grad.values

    def precision(self, v):
        r = self.responsibilities(v)
        return self.scale * sum(rk * c.inv_covariance.matrix for rk, c in zip(r, self.components))


def mixture_log_density(prior, v):
    """Mixture log density, gradient and responsibilities ``p0(k|v)``."""
    logs = prior.component_log_densities(v)
    if not np.any(np.isfinite(logs)):
        raise NumericalError("all mixture component densities underflowed")
    top = logs.max()
    w = np.exp(logs - top)
    total = w.sum()
    resp = w / total
    value = float(top + np.log(total))
    lat = prior.lattice
    vv = as_values(v, lat)
    grad = np.zeros(lat.n_points)
    for rk, c in zip(resp, prior.components):
        if rk > 0:
            grad -= rk * c.scale * (c.inv_covariance.matrix @ (vv - c.mean.values))
    return value, GradientField(grad, lat), resp


@dataclass(frozen=True, eq=False)
class SymmetryPrior:
    """Approximate-symmetry energy ``E_S = 1/2 <w - S w|K_S|w - S w>``, ``w = v - V0``."""

    symmetry_op: LatticeOperator
    weight_op: LatticeOperator
    reference: PotentialField | None = None

    def __post_init__(self):
        s = self.symmetry_op.matrix
        if np.abs(s.T @ s - np.eye(s.shape[0])).max() >= 1e-12:
            raise ValueError("symmetry operator must be orthogonal")
        if not self.symmetry_op.lattice.same_grid(self.weight_op.lattice):
            raise LatticeMismatchError("symmetry and weight operators differ in lattice")
        _psd_spectrum(self.weight_op)

    @property
    def lattice(self):
        return self.symmetry_op.lattice

    def operator(self):
        """Equivalent inverse covariance ``(I - S)^T K_S (I - S)``."""
        n = self.lattice.n_points
        a = np.eye(n) - self.symmetry_op.matrix
        m = a.T @ self.weight_op.matrix @ a
        return LatticeOperator(0.5 * (m + m.T), self.lattice)

    def log_density(self, v):
        value, grad = symmetry_energy(self, v)
        return -value, -grad.values

    def precision(self, v=None):
        return self.operator().matrix


def symmetry_energy(prior, v):
    """``E_S`` and its gradient ``(I-S)^T K_S (I-S)(v - V0)``.

    The log prior is ``-E_S``; ``SymmetryPrior.log_density`` applies the sign.
    """
    lat = prior.lattice
    w = as_values(v, lat)
    if prior.reference is not None:
        w = w - prior.reference.values
    k0 = prior.operator()
    value = 0.5 * quadratic_form(k0, w, w)
    return value, GradientField(k0.matrix @ w, lat)


def translation_symmetry_prior(lattice):
    """Infinitesimal-translation error: one-cell shift with ``K_S = I / spacing^2``.

    Its operator equals the negative periodic Laplacian.
    """
    from .lattice import identity_operator, translation_operator

    return SymmetryPrior(translation_operator(lattice, 1), identity_operator(lattice) * (1.0 / lattice.spacing**2))


@dataclass(frozen=True)
class EnergyPenalty:
    """Noisy average-energy datum ``E_U = (mu/2) (U - kappa)^2``."""

    mu: float
    kappa: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError("mu must be non-negative")


def energy_penalty_value(pen, u):
    return 0.5 * pen.mu * (u - pen.kappa) ** 2
