"""Functional derivatives with respect to the lattice potential ``v(x)``.

A functional derivative on the lattice is the ordinary partial derivative with
respect to ``v_j`` divided by the cell measure, so that
``dF = sum_j grad_j * dv_j * spacing``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ZeroLikelihoodError
from .spectral import position_likelihood


@dataclass(frozen=True, eq=False)
class GradientField:
    values: np.ndarray
    lattice: object
    degenerate_threshold: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("gradient has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def integral(self):
        return float(self.values.sum() * self.lattice.spacing)


def _threshold(spec, threshold):
    return spec.degenerate_threshold() if threshold is None else float(threshold)


def d_energy(spec, alpha):
    """``dE_alpha / dv(x) = |phi_alpha(x)|^2``."""
    return GradientField(spec.orbitals[:, alpha] ** 2, spec.lattice, spec.degenerate_threshold())


def d_orbital(spec, alpha, x_eval, threshold=None):
    """``d phi_alpha(x_eval) / dv(x)`` from the non-degenerate resolvent sum.

    Levels within ``threshold`` of ``E_alpha`` are excluded (their overlap with
    the response is fixed to zero).
    """
    thr = _threshold(spec, threshold)
    e = spec.energies
    phi = spec.orbitals
    gap = e[alpha] - e
    keep = np.abs(gap) >= thr
    keep[alpha] = False
    near = keep & (np.abs(gap) < 10.0 * thr)
    if np.any(near):
        warnings.warn(
            f"level(s) {np.flatnonzero(near).tolist()} lie within 10x the degeneracy "
            f"threshold of level {alpha}; resolvent terms may be large",
            RuntimeWarning,
            stacklevel=2,
        )
    coef = np.zeros_like(e)
    coef[keep] = phi[x_eval, keep] / gap[keep]
    return GradientField(phi[:, alpha] * (phi @ coef), spec.lattice, thr)


def thermal_divided_differences(energies, weights, beta, threshold, degenerate="confluent"):
    """Matrix ``F[a,g] = (p_a - p_g) / (E_a - E_g)`` with diagonal ``-beta p_a``.

    Pairs closer than ``threshold`` get the confluent limit ``-beta p`` when
    ``degenerate == "confluent"`` and zero when ``degenerate == "exclude"``.
    """
    e = np.asarray(energies)
    p = np.asarray(weights)
    lower_is_a = e[:, None] <= e[None, :]
    p_lo = np.where(lower_is_a, p[:, None], p[None, :])
    gap = np.abs(e[:, None] - e[None, :])
    close = gap < threshold
    with np.errstate(divide="ignore", invalid="ignore"):
        f = p_lo * np.expm1(-beta * gap) / gap
    if degenerate == "confluent":
        limit = -0.5 * beta * (p[:, None] + p[None, :])
    elif degenerate == "exclude":
        limit = np.zeros_like(f)
    else:
        raise ValueError(f"unknown degenerate rule {degenerate!r}")
    f = np.where(close, limit, f)
    np.fill_diagonal(f, -beta * p)
    return f


def d_log_likelihood(spec, ens, data, threshold=None, degenerate="confluent", counts=None):
    """``sum_i d ln p(x_i) / dv(x)`` combining orbital response and thermal terms.

    ``degenerate="exclude"`` drops cross terms between levels closer than the
    threshold; ``"confluent"`` (default) keeps their analytic limit, which is
    the derivative of the thermal density itself.
    """
    lat = spec.lattice
    if counts is None:
        from .data import cell_counts

        counts = cell_counts(data, lat)
    thr = _threshold(spec, threshold)
    p = position_likelihood(spec, ens)
    occupied = np.flatnonzero(counts)
    if np.any(p[occupied] <= 0):
        bad = int(occupied[p[occupied] <= 0][0])
        datum = None
        if data is not None:
            from .data import as_coordinates

            datum = int(np.flatnonzero(lat.index_of(as_coordinates(data)) == bad)[0])
        raise ZeroLikelihoodError(
            f"datum {datum} at lattice cell {bad} (x={lat.x[bad]}) has zero likelihood", datum)
    phi = spec.orbitals
    w = counts[occupied] / p[occupied]
    rows = phi[occupied]
    c = rows.T @ (w[:, None] * rows)
    f = thermal_divided_differences(spec.energies, ens.weights, ens.beta, thr, degenerate)
    phi_c, cf = _kernels.contiguous(phi, c * f)
    grad = _kernels.diag_sandwich(phi_c, cf) + ens.beta * counts.sum() * p
    return GradientField(grad, lat, thr)


def d_average_energy(spec, ens):
    """``dU/dv(x) = <|phi|^2> - beta (<E |phi|^2> - U <|phi|^2>)``."""
    u = ens.average_energy
    coef = ens.weights * (1.0 - ens.beta * (spec.energies - u))
    return GradientField((spec.orbitals**2) @ coef, spec.lattice, spec.degenerate_threshold())


def d_energy_penalty(spec, ens, mu, kappa):
    """Gradient of ``(mu/2) (U - kappa)^2``."""
    g = d_average_energy(spec, ens)
    return GradientField(mu * (ens.average_energy - kappa) * g.values, spec.lattice,
                         g.degenerate_threshold)


def contract_parametric(grad, sensitivity):
    """Chain rule ``dF/dxi_l = sum_x (dv(x)/dxi_l) * grad(x) * spacing``.

    ``sensitivity`` has shape ``(n_params, n_points)``.
    """
    s = np.atleast_2d(np.asarray(sensitivity, dtype=float))
    return s @ np.asarray(grad.values) * grad.lattice.spacing
