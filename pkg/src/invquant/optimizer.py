"""Maximum-posterior reconstruction by preconditioned fixed-point iteration.

A problem supplies ``evaluate(v) -> Evaluation`` (log posterior and its
functional gradient) and ``precision(v)`` (the iteration matrix ``A``).
Updates act on free coordinates ``s`` with ``v = base + E s``, so pinned
boundary cells and mirror symmetry are exact. Each step is

    s <- s + eta * (E^T A E)^{-1} E^T g

which for ``A = lambda K0`` and ``eta = 1`` is the plain prior-operator
fixed-point map ``v = v0 + (lambda K0)^{-1} (likelihood gradient)``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, cell_counts
from .errors import (ConvergenceError, LatticeMismatchError, NumericalError, OptimizerStall,
                     PreconditionerError)
from .gradients import (GradientField, d_average_energy, d_energy_penalty, d_log_likelihood,
                        thermal_divided_differences)
from .lattice import Boundary, LatticeOperator, PotentialField, as_values
from .priors import energy_penalty_value
from .spectral import position_likelihood, solve

log = logging.getLogger(__name__)

MAX_SHRINKS = 30
MIN_DENSITY = 1e-300
POSTERIOR_WINDOW = 3


class Preconditioner(str, enum.Enum):
    IDENTITY = "identity"
    PRIOR_OPERATOR = "prior"
    GAUSS_NEWTON = "gauss_newton"
    CUSTOM = "custom"


class InitialGuess(str, enum.Enum):
    REFERENCE = "reference"
    DELTA_PEAKS = "delta_peaks"
    CUSTOM = "custom"


@dataclass(frozen=True)
class OptimizerConfig:
    """Step control and stopping rule.

    ``gradient_tolerance`` is relative: the absolute threshold on the sup-norm
    of the free gradient is ``gradient_tolerance * problem.gradient_scale``.
    """

    step_eta: float = 0.5
    preconditioner: Preconditioner = Preconditioner.PRIOR_OPERATOR
    custom_operator: LatticeOperator | None = None
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    posterior_tolerance: float = 1e-10
    step_growth: float = 1.5
    step_shrink: float = 0.5
    initial_guess: InitialGuess = InitialGuess.REFERENCE
    custom_guess: PotentialField | None = None

    def __post_init__(self):
        object.__setattr__(self, "preconditioner", Preconditioner(self.preconditioner))
        object.__setattr__(self, "initial_guess", InitialGuess(self.initial_guess))
        if not 0 < self.step_eta <= 1:
            raise ValueError("step_eta must lie in (0, 1]")
        if not (self.gradient_tolerance > 0 and self.posterior_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if not self.step_growth > 1 > self.step_shrink > 0:
            raise ValueError("need step_growth > 1 > step_shrink > 0")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 0:
            raise ValueError("max_iterations must be a non-negative integer")
        if self.preconditioner is Preconditioner.CUSTOM and self.custom_operator is None:
            raise ValueError("custom preconditioner needs custom_operator")
        if self.initial_guess is InitialGuess.CUSTOM and self.custom_guess is None:
            raise ValueError("custom initial guess needs custom_guess")

    def describe(self):
        """Plain-data record of the step and stopping rules."""
        return {
            "step_eta": self.step_eta,
            "step_growth": self.step_growth,
            "step_shrink": self.step_shrink,
            "max_shrinks": MAX_SHRINKS,
            "preconditioner": self.preconditioner.value,
            "max_iterations": int(self.max_iterations),
            "gradient_tolerance": self.gradient_tolerance,
            "posterior_tolerance": self.posterior_tolerance,
            "posterior_window": POSTERIOR_WINDOW,
            "min_density": MIN_DENSITY,
            "initial_guess": self.initial_guess.value,
        }


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    potential: PotentialField
    log_posterior_trace: tuple
    final_gradient_norm: float
    iterations_used: int
    ensemble_summary: dict
    responsibilities: np.ndarray | None = None
    converged: bool = True
    stop_reason: str = ""
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Evaluation:
    log_posterior: float
    gradient: np.ndarray
    min_density: float = math.inf
    summary: dict = field(default_factory=dict)
    responsibilities: np.ndarray | None = None


# --- parameterization -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Parameterization:
    """Linear map ``s -> E s`` from free coordinates to lattice increments."""

    embedding: np.ndarray
    mode: str

    @classmethod
    def interior(cls, lattice, pinned=(0, -1)):
        """Every cell free except ``pinned`` (default: both endpoints)."""
        n = lattice.n_points
        fixed = {p % n for p in pinned}
        free = [j for j in range(n) if j not in fixed]
        return cls(np.eye(n)[:, free], "interior")

    @classmethod
    def symmetric(cls, lattice, pinned=(0, -1)):
        """Mirror-symmetric increments ``v(x) = v(-x)``; mirrored pins are pinned too."""
        n = lattice.n_points
        mirror = lattice.mirror_index()
        fixed = {p % n for p in pinned}
        fixed |= {int(mirror[p]) for p in fixed}
        cols = []
        for j in range(n):
            mj = int(mirror[j])
            if j > mj or j in fixed:
                continue
            col = np.zeros(n)
            col[j] = 1.0
            col[mj] = 1.0
            cols.append(col)
        return cls(np.column_stack(cols), "symmetric")

    @property
    def n_free(self):
        return self.embedding.shape[1]

    def project_gradient(self, g):
        """Gradient per free coordinate, averaged over mirrored cells."""
        e = self.embedding
        return (e.T @ g) / e.sum(axis=0)


def enforce_symmetry_constraint(v):
    """Fold ``v`` to ``(v(x) + v(-x)) / 2`` about the lattice midpoint."""
    lat = v.lattice
    mirror = lat.mirror_index()
    vals = v.values
    out = 0.5 * (vals + vals[mirror])
    # exact symmetry: pick one representative for each mirror pair
    out = np.where(np.arange(lat.n_points) <= mirror, out, out[mirror])
    return PotentialField(out, lat)


def initial_guess_delta_peaks(data, lattice, pinned=(0, -1)):
    """``-n(x) / spacing`` from the data histogram; pinned cells set to zero."""
    counts = cell_counts(data, lattice) if _n_data(data) else np.zeros(lattice.n_points)
    v = -counts / lattice.spacing
    for p in pinned:
        v[p] = 0.0
    return PotentialField(v, lattice)


# --- the single-particle quantum problem -----------------------------------

class QuantumProblem:
    """Posterior ``ln p(D|v) + sum ln p0(v) - E_U`` for thermal single-particle data."""

    def __init__(self, lattice, mass, beta, data, priors=(), penalty=None,
                 wavefn_boundary=Boundary.DIRICHLET, reference=None, parameterization=None,
                 degenerate="confluent"):
        if not mass > 0 or not beta > 0:
            raise ValueError("mass and beta must be positive")
        self.lattice = lattice
        self.mass = float(mass)
        self.beta = float(beta)
        self.priors = tuple(priors)
        for p in self.priors:
            if not p.lattice.same_grid(lattice):
                raise LatticeMismatchError("prior and problem lattices differ")
        self.penalty = penalty
        self.wavefn_boundary = Boundary(wavefn_boundary)
        self.counts = cell_counts(data, lattice) if _n_data(data) else np.zeros(lattice.n_points)
        self.data = data
        self.degenerate = degenerate
        self.parameterization = parameterization or Parameterization.interior(lattice)
        if reference is None:
            reference = _default_reference(self.priors, lattice)
        self.reference = reference

    @property
    def n_data(self):
        return float(self.counts.sum())

    @property
    def gradient_scale(self):
        b = self.beta if math.isfinite(self.beta) else 1.0
        return max(1.0, self.n_data * b)

    def evaluate(self, v):
        lat = self.lattice
        vv = as_values(v, lat)
        field_ = PotentialField(vv, lat)
        dec, ens = solve(self.mass, field_, self.beta, self.wavefn_boundary)
        p = position_likelihood(dec, ens)
        occ = self.counts > 0
        pmin = float(p[occ].min()) if occ.any() else math.inf
        summary = {"U": ens.average_energy, "E0": float(dec.energies[0]),
                   "lnZ": ens.log_partition}
        if pmin <= 0:
            return Evaluation(-math.inf, np.zeros(lat.n_points), pmin, summary)
        value = float(self.counts[occ] @ np.log(p[occ]))
        grad = np.zeros(lat.n_points)
        if occ.any():
            grad += d_log_likelihood(dec, ens, None, degenerate=self.degenerate,
                                     counts=self.counts).values
        resp = None
        for prior in self.priors:
            pv, pg = prior.log_density(field_)
            value += pv
            grad += pg
            if hasattr(prior, "responsibilities"):
                resp = prior.responsibilities(field_)
        if self.penalty is not None and self.penalty.mu > 0:
            value -= energy_penalty_value(self.penalty, ens.average_energy)
            grad -= d_energy_penalty(dec, ens, self.penalty.mu, self.penalty.kappa).values
        return Evaluation(value, grad, pmin, summary, resp)

    def precision(self, v):
        if not self.priors:
            raise PreconditionerError("prior-operator preconditioning needs at least one prior")
        return sum(p.precision(v) for p in self.priors)

    def curvature(self, v):
        """Expected Fisher information of the data term plus the penalty's outer product.

        Scaled like ``precision`` so both add to a Gauss-Newton iteration matrix.
        """
        lat = self.lattice
        h = lat.spacing
        dec, ens = solve(self.mass, PotentialField(as_values(v, lat), lat), self.beta,
                         self.wavefn_boundary)
        p = position_likelihood(dec, ens)
        jac = density_jacobian(dec, ens)
        out = self.n_data * h * h * (jac.T / np.maximum(p, np.finfo(float).tiny)) @ jac
        if self.penalty is not None and self.penalty.mu > 0:
            du = d_average_energy(dec, ens).values
            out += self.penalty.mu * h * np.outer(du, du)
        return out


def density_jacobian(spec, ens, threshold=None):
    """``J[x, y] = d p(x) / d v(y)`` of the thermal position density."""
    thr = spec.degenerate_threshold() if threshold is None else threshold
    phi = spec.orbitals
    n, levels = phi.shape
    f = thermal_divided_differences(spec.energies, ens.weights, ens.beta, thr)
    pairs = (phi[:, :, None] * phi[:, None, :]).reshape(n, levels * levels)
    p = position_likelihood(spec, ens)
    return (pairs * f.ravel()) @ pairs.T + ens.beta * np.outer(p, p)


def _n_data(data):
    if data is None:
        return 0
    return len(data) if isinstance(data, Dataset) else np.asarray(data).size


def _default_reference(priors, lattice):
    for p in priors:
        if hasattr(p, "mean"):
            return p.mean
        if hasattr(p, "components"):
            w = np.asarray(p.weights)
            return p.components[int(np.argmax(w))].mean
    return PotentialField.zeros(lattice)


def total_log_posterior(v, data, priors=(), penalty=None, beta=1.0, mass=1.0,
                        wavefn_boundary=Boundary.DIRICHLET):
    """Log-likelihood + log-priors - E_U, up to a v-independent constant."""
    lat = v.lattice
    return QuantumProblem(lat, mass, beta, data, priors, penalty, wavefn_boundary).evaluate(v).log_posterior


def stationarity_residual(v, data, priors=(), penalty=None, beta=1.0, mass=1.0,
                          wavefn_boundary=Boundary.DIRICHLET):
    """Functional gradient of ``total_log_posterior``; zero at a stationary point."""
    lat = v.lattice
    ev = QuantumProblem(lat, mass, beta, data, priors, penalty, wavefn_boundary).evaluate(v)
    if not math.isfinite(ev.log_posterior):
        raise NumericalError("posterior is zero at v; gradient undefined")
    return GradientField(ev.gradient, lat)


# --- the iteration ----------------------------------------------------------

def _start(config, problem):
    lat = problem.lattice
    if config.initial_guess is InitialGuess.REFERENCE:
        v = problem.reference
    elif config.initial_guess is InitialGuess.DELTA_PEAKS:
        v = PotentialField(problem.reference.values, lat) + initial_guess_delta_peaks(
            problem.data, lat).values
    else:
        v = config.custom_guess
    v = PotentialField(as_values(v, lat), lat)
    if problem.parameterization.mode == "symmetric":
        v = enforce_symmetry_constraint(v)
    return v.values.copy()


def _reduced_operator(config, problem, v, e):
    if config.preconditioner is Preconditioner.IDENTITY:
        a = np.eye(problem.lattice.n_points)
    elif config.preconditioner is Preconditioner.GAUSS_NEWTON:
        a = problem.precision(v) + problem.curvature(v)
    elif config.preconditioner is Preconditioner.CUSTOM:
        a = config.custom_operator.matrix
    else:
        a = problem.precision(v)
    m = e.T @ a @ e
    m = 0.5 * (m + m.T)
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise PreconditionerError("iteration matrix is not positive definite on the free cells") from exc
    return m


def _evaluate_safely(problem, v):
    try:
        ev = problem.evaluate(v)
    except (NumericalError, ConvergenceError, FloatingPointError) as exc:
        log.debug("trial point rejected: %s", exc)
        return None
    if not math.isfinite(ev.log_posterior) or ev.min_density < MIN_DENSITY:
        return None
    return ev


def iterate(config, problem):
    """Run the fixed-point iteration with backtracking step control.

    A trial step is accepted when the log posterior does not decrease; else
    ``eta`` shrinks (at most ``MAX_SHRINKS`` times). On acceptance ``eta``
    grows, capped at 1. Trial points where the model fails or some datum's
    density drops below ``MIN_DENSITY`` count as decreases.
    """
    lat = problem.lattice
    e = problem.parameterization.embedding
    h = lat.spacing
    v = _start(config, problem)
    ev = problem.evaluate(v)
    if not math.isfinite(ev.log_posterior):
        raise NumericalError("initial guess has zero posterior density")
    trace = [ev.log_posterior]
    tol = config.gradient_tolerance * problem.gradient_scale
    gnorm = float(np.abs(problem.parameterization.project_gradient(ev.gradient)).max(initial=0.0))
    eta = config.step_eta
    flat_run = 0
    converged = False
    reason = "max_iterations"
    it = 0
    if gnorm < tol:
        converged, reason = True, "gradient"
    while not converged and it < config.max_iterations:
        m = _reduced_operator(config, problem, v, e)
        rhs = e.T @ ev.gradient
        direction = e @ np.linalg.solve(m, rhs)
        predicted = float(rhs @ (e.T @ direction)) * h
        for _ in range(MAX_SHRINKS + 1):
            trial = v + eta * direction
            new = _evaluate_safely(problem, trial)
            if new is not None and new.log_posterior >= ev.log_posterior:
                break
            eta *= config.step_shrink
        else:
            # no ascent even for tiny steps: accept only if the gain is at roundoff
            gain = eta * predicted
            if abs(gain) <= 1e-12 * max(1.0, abs(ev.log_posterior)):
                converged, reason = True, "roundoff"
                break
            raise OptimizerStall(f"line search exhausted after {MAX_SHRINKS} shrinks at iteration {it}",
                                 trace)
        it += 1
        v, old = trial, ev.log_posterior
        ev = new
        trace.append(ev.log_posterior)
        eta = min(eta * config.step_growth, 1.0)
        gnorm = float(np.abs(problem.parameterization.project_gradient(ev.gradient)).max(initial=0.0))
        if gnorm < tol:
            converged, reason = True, "gradient"
            break
        rel = abs(ev.log_posterior - old) / max(1.0, abs(ev.log_posterior))
        flat_run = flat_run + 1 if rel < config.posterior_tolerance else 0
        if flat_run >= POSTERIOR_WINDOW:
            converged, reason = True, "posterior"
    meta = config.describe()
    meta.update({"gradient_threshold": tol, "parameterization": problem.parameterization.mode})
    return ReconstructionResult(
        PotentialField(v, lat), tuple(trace), gnorm, it, dict(ev.summary),
        None if ev.responsibilities is None else np.asarray(ev.responsibilities),
        converged, reason, meta,
    )
