"""Hartree-Fock mean field for spinless fermions with a local pair potential.

Matrices act on the orthonormal lattice basis (unit vectors ``u = phi *
sqrt(spacing)``); orbitals handed out are normalized with the cell measure.
The pair potential lives on a lattice of relative distances measured in
cells: ``W[x, y] = v(min(|i - j|, k - 1))``, so distances past the last
relative cell reuse its value. ``v(0)`` never enters: at coincident points
the direct and exchange terms cancel.

Derivatives with respect to the pair potential are functional derivatives
on the relative lattice (partial derivative divided by its spacing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset, observable_for_arity
from .errors import (ConvergenceError, DegeneracyError, LatticeMismatchError, NumericalError,
                     PreconditionerError, SingularOverlapError)
from .gradients import GradientField
from .lattice import Boundary, PotentialField, as_values, build_laplacian
from .optimizer import Evaluation, Parameterization, iterate
from .priors import energy_penalty_value

MAX_EXACT_STATES = 4096


@dataclass(frozen=True, eq=False)
class TwoBodySpec:
    mass: float
    one_body_potential: PotentialField
    two_body_potential: PotentialField
    n_particles: int
    wavefn_boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        n = int(self.n_particles)
        if n != self.n_particles or n < 1:
            raise ValueError("n_particles must be a positive integer")
        if n > self.lattice.n_points:
            raise ValueError("more particles than lattice cells")
        if self.two_body_potential.values[0] != 0.0:
            raise ValueError("two-body potential must vanish at distance 0")
        if not math.isclose(self.relative_lattice.spacing, self.lattice.spacing, rel_tol=1e-12):
            raise LatticeMismatchError("relative lattice must share the particle lattice spacing")
        object.__setattr__(self, "n_particles", n)
        object.__setattr__(self, "wavefn_boundary", Boundary(self.wavefn_boundary))

    @property
    def lattice(self):
        return self.one_body_potential.lattice

    @property
    def relative_lattice(self):
        return self.two_body_potential.lattice

    def with_two_body(self, v):
        return TwoBodySpec(self.mass, self.one_body_potential,
                           PotentialField(as_values(v, self.relative_lattice), self.relative_lattice),
                           self.n_particles, self.wavefn_boundary)

    def distance_bins(self):
        i = np.arange(self.lattice.n_points)
        return np.minimum(np.abs(i[:, None] - i[None, :]), self.relative_lattice.n_points - 1)

    def interaction_matrix(self):
        return self.two_body_potential.values[self.distance_bins()]

    def one_body_matrix(self):
        lat = self.lattice.with_boundary(self.wavefn_boundary)
        return -build_laplacian(lat).matrix / (2.0 * self.mass) + np.diag(self.one_body_potential.values)


class AntisymmetrizedInteraction:
    """``<z z'|V|z'' z'''> = W[z, z'] (d(z,z'') d(z',z''') - d(z,z''') d(z',z''))``."""

    def __init__(self, spec):
        self.w = spec.interaction_matrix()
        self.n = spec.lattice.n_points

    def __call__(self, z, z1, z2, z3):
        return self.w[z, z1] * (float(z == z2 and z1 == z3) - float(z == z3 and z1 == z2))

    def tensor(self):
        n = self.n
        if n > 32:
            raise ValueError("dense four-index tensor limited to 32 cells")
        eye = np.eye(n)
        direct = np.einsum("ab,ac,bd->abcd", self.w, eye, eye)
        return direct - direct.transpose(0, 1, 3, 2)

    def orbital_elements(self, u):
        """``v[k, l] = <kl|V|kl>`` (antisymmetrized) for unit-vector orbitals ``u``."""
        sq = u * u
        direct = sq.T @ self.w @ sq
        exchange = np.einsum("xk,xl,xy,yk,yl->kl", u, u, self.w, u, u, optimize=True)
        return direct - exchange


def antisymmetrized_matrix_elements(spec):
    return AntisymmetrizedInteraction(spec)


@dataclass(frozen=True, eq=False)
class HartreeFockState:
    """Self-consistent orbitals. ``orbitals`` holds the N occupied ones (columns).

    ``all_energies`` / ``all_orbitals`` keep the full spectrum of the final
    mean field, which the linear response needs.
    """

    orbitals: np.ndarray
    orbital_energies: np.ndarray
    hf_ground_energy: float
    scf_residual: float
    iterations: int
    all_energies: np.ndarray = field(repr=False)
    all_orbitals: np.ndarray = field(repr=False)
    lattice: object = field(repr=False)
    trace: tuple = field(default=(), repr=False)

    @property
    def n_particles(self):
        return self.orbitals.shape[1]

    @property
    def unit_vectors(self):
        return self.all_orbitals * math.sqrt(self.lattice.spacing)

    def density_matrix(self):
        u = self.unit_vectors[:, : self.n_particles]
        return u @ u.T


def _mean_field(one_body, w, rho):
    g = _kernels.mean_field(*_kernels.contiguous(w, rho))
    return one_body + g


def _occupied(vecs, n):
    u = vecs[:, :n]
    return u @ u.T


def _fermi_gap_check(energies, n, scale):
    if n < energies.size and energies[n] - energies[n - 1] < 1e-10 * max(scale, 1.0):
        raise DegeneracyError(
            f"levels {n - 1} and {n} are degenerate at the Fermi level "
            f"({energies[n - 1]!r} vs {energies[n]!r}); occupation is ambiguous"
        )


def _hf_energy(one_body, w, u_occ):
    rho = u_occ @ u_occ.T
    kinetic = float(np.einsum("xk,xy,yk->", u_occ, one_body, u_occ))
    dens = np.diag(rho)
    pair = 0.5 * float(dens @ w @ dens - np.sum(w * rho * rho))
    return kinetic + pair


def scf_solve(spec, mixing=0.5, max_scf=500, tol=1e-11):
    """Self-consistent field by linear density mixing.

    Converged when successive mean-field matrices differ by less than ``tol``
    in sup-norm. The mixing drops to 0.2 once the residual has failed to
    improve by 10% for five consecutive steps.
    """
    if not 0 < mixing <= 1:
        raise ValueError("mixing must lie in (0, 1]")
    n = spec.n_particles
    t = spec.one_body_matrix()
    w = spec.interaction_matrix()
    scale = float(np.abs(t).max() + np.abs(w).max())
    energies, vecs = np.linalg.eigh(t)
    rho = _occupied(vecs, n)
    h_prev = t
    trace = []
    alpha = mixing
    best, stalled = np.inf, 0
    for it in range(1, max_scf + 1):
        h = _mean_field(t, w, rho)
        energies, vecs = np.linalg.eigh(h)
        res = float(np.abs(h - h_prev).max())
        trace.append(res)
        if res < tol * max(scale, 1.0):
            break
        # oscillation shows up as a residual that stops improving
        if res < 0.9 * best:
            best, stalled = res, 0
        else:
            stalled += 1
            if stalled >= 5 and alpha > 0.2:
                alpha, stalled = 0.2, 0
        rho = (1.0 - alpha) * rho + alpha * _occupied(vecs, n)
        h_prev = h
    else:
        raise ConvergenceError(f"SCF did not converge in {max_scf} iterations", trace)
    _fermi_gap_check(energies, n, scale)
    from .spectral import _fix_signs

    vecs = _fix_signs(vecs)
    root_h = math.sqrt(spec.lattice.spacing)
    e_hf = _hf_energy(t, w, vecs[:, :n])
    energies.setflags(write=False)
    phi = vecs / root_h
    phi.setflags(write=False)
    return HartreeFockState(phi[:, :n], energies[:n], e_hf, trace[-1], it, energies, phi,
                            spec.lattice, tuple(trace))


def hf_energy_from_orbitals(state, spec):
    """Both closed forms of the HF energy: ``(sum t_kk + v/2, sum eps_k - v/2)``."""
    u = state.unit_vectors[:, : state.n_particles]
    t = spec.one_body_matrix()
    v = antisymmetrized_matrix_elements(spec).orbital_elements(u)
    tkk = float(np.einsum("xk,xy,yk->", u, t, u))
    half_v = 0.5 * float(v.sum())
    return tkk + half_v, float(state.orbital_energies.sum()) - half_v


# --- Slater likelihood -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SlaterOverlap:
    overlap_matrix: np.ndarray
    determinant: float
    inverse: np.ndarray | None


def _tuple_indices(state, datum):
    idx = state.lattice.index_of(np.asarray(datum, dtype=float))
    if idx.shape != (state.n_particles,):
        raise ValueError(f"datum needs {state.n_particles} coordinates")
    return idx


def slater_overlap(state, datum):
    """``B[k, l] = phi_k(x_l)``; inverse only when ``det B`` is non-zero."""
    idx = _tuple_indices(state, datum)
    b = state.orbitals[idx, :].T
    det = float(np.linalg.det(b))
    inv = None
    if det != 0.0 and np.linalg.cond(b) < 1e13:
        inv = np.linalg.inv(b)
    return SlaterOverlap(b, det, inv)


def slater_likelihood(state, datum):
    """``|det B|^2 / N!``: normalized over ordered tuples with measure ``spacing^N``."""
    idx = _tuple_indices(state, datum)
    if len(set(idx.tolist())) < idx.size:
        return 0.0
    b = state.orbitals[idx, :].T
    return float(np.linalg.det(b)) ** 2 / math.factorial(state.n_particles)


def slater_pair_density(state):
    """Ordered-pair density of a two-particle Slater determinant on the full grid."""
    if state.n_particles != 2:
        raise ValueError("pair density needs exactly two particles")
    a, b = state.orbitals[:, 0], state.orbitals[:, 1]
    det = np.outer(a, b) - np.outer(b, a)
    return 0.5 * det**2


# --- linear response of the HF orbitals ------------------------------------

@dataclass(frozen=True, eq=False)
class OrbitalResponse:
    """``values[d, x, k] = d phi_k(x) / d v(d)`` for all relative cells ``d``."""

    values: np.ndarray
    iterations: int
    method: str


def _response_denominators(state, spec):
    e = state.all_energies
    n = state.n_particles
    span = float(e[-1] - e[0]) if e.size > 1 else 1.0
    thr = 1e-8 * max(span, np.finfo(float).tiny)
    gap = e[None, :n] - e[:, None]          # [l, k] = eps_k - eps_l
    keep = np.abs(gap) >= thr
    if np.any(~keep[n:, :]):
        raise DegeneracyError("an occupied level is degenerate with a virtual level")
    with np.errstate(divide="ignore"):
        d = np.where(keep, 1.0 / np.where(keep, gap, 1.0), 0.0)
    return d


def _delta_rho(u, u_occ, c):
    # c[d, l, k]: coefficient of u_l in the change of occupied orbital k
    du = np.einsum("xl,dlk->dxk", u, c)
    m = np.einsum("dxk,yk->dxy", du, u_occ)
    return m + m.transpose(0, 2, 1)


def _response_apply(u, u_occ, w, c):
    return _kernels.projected_mean_field(*_kernels.contiguous(u, u_occ, w, _delta_rho(u, u_occ, c)))


def inverse_hf_gradient(state, spec, x=None, tol=1e-9, max_iter=200):
    """Orbital response to the pair potential from the self-consistent linear system.

    Fixed-point iteration from zero response; falls back to a dense solve of
    the occupied-virtual block when the iteration stalls or diverges.
    Pairs closer than the degeneracy threshold carry no response.
    """
    n = state.n_particles
    u = state.unit_vectors
    u_occ = u[:, :n]
    w = spec.interaction_matrix()
    bins = spec.distance_bins()
    nd = spec.relative_lattice.n_points
    dnm = _response_denominators(state, spec)
    rho = u_occ @ u_occ.T
    src = _kernels.binned_mean_field(*_kernels.contiguous(u, u_occ, rho), bins.astype(np.int64), nd)
    # response per relative cell is in functional units: divide by its spacing
    scale = 1.0 / (math.sqrt(state.lattice.spacing) * spec.relative_lattice.spacing)
    c = np.zeros_like(src)
    method = "fixed_point"
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        c_new = dnm * (src + _response_apply(u, u_occ, w, c))
        diff = float(np.abs(np.einsum("xl,dlk->dxk", u, c_new - c)).max()) * scale
        c = c_new
        if diff < tol:
            break
        if diff > 10 * prev or not np.isfinite(diff):
            it = max_iter + 1
            break
        prev = min(prev, diff)
    if it > max_iter or diff >= tol:
        c = _dense_response(u, u_occ, w, src, dnm, n)
        method = "direct"
    values = np.einsum("xl,dlk->dxk", u, c) * scale
    if x is not None:
        values = values[x]
    return OrbitalResponse(values, it, method)


def _dense_response(u, u_occ, w, src, dnm, n):
    # only occupied-virtual coefficients feed back through the density
    nl = u.shape[1]
    nv = nl - n
    m = nv * n
    basis = np.zeros((m, nl, n))
    j = np.arange(m)
    basis[j, n + j // n, j % n] = 1.0
    images = dnm * _response_apply(u, u_occ, w, basis)
    op = images[:, n:, :].reshape(m, m).T
    rhs = (dnm * src)[:, n:, :].reshape(src.shape[0], m)
    try:
        sol = np.linalg.solve(np.eye(m) - op, rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("response system is singular") from exc
    c = np.zeros_like(src)
    c[:, n:, :] = sol.reshape(src.shape[0], nv, n)
    return dnm * (src + _response_apply(u, u_occ, w, c))


def _data_indices(state, data):
    s = data.samples if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    s = s.reshape(-1, state.n_particles)
    return state.lattice.index_of(s).reshape(-1, state.n_particles)


def per_datum_gradients(state, spec, data, response=None):
    """Rows ``d ln p(x_i) / d v`` (functional, over relative cells) for each datum."""
    idx = _data_indices(state, data)
    if idx.shape[0] == 0:
        return np.zeros((0, spec.relative_lattice.n_points))
    if response is None:
        response = inverse_hf_gradient(state, spec)
    phi = state.orbitals
    out = np.empty((idx.shape[0], spec.relative_lattice.n_points))
    for i, row in enumerate(idx):
        b = phi[row, :].T
        det = np.linalg.det(b)
        if det == 0.0 or np.linalg.cond(b) > 1e13:
            raise SingularOverlapError(f"overlap matrix of datum {i} is singular", i)
        binv = np.linalg.inv(b)
        delta = response.values[:, row, :].transpose(0, 2, 1)   # [d, k, l]
        # real orbitals: both trace terms coincide
        out[i] = 2.0 * np.einsum("lk,dkl->d", binv, delta)
    return out


def hf_log_likelihood_gradient(state, spec, data, response=None):
    g = per_datum_gradients(state, spec, data, response)
    return GradientField(g.sum(axis=0), spec.relative_lattice)


def hf_log_likelihood(state, data):
    idx = _data_indices(state, data)
    total = 0.0
    for i, row in enumerate(idx):
        p = slater_likelihood(state, state.lattice.x[row])
        if p <= 0:
            return -math.inf
        total += math.log(p)
    return total


def d_hf_energy(state, spec):
    """``d E_HF / d v`` by the Hellmann-Feynman theorem at self-consistency."""
    rho = state.density_matrix()
    dens = np.diag(rho)
    pair = 0.5 * (np.outer(dens, dens) - rho * rho)
    nd = spec.relative_lattice.n_points
    g = np.bincount(spec.distance_bins().ravel(), weights=pair.ravel(), minlength=nd)
    return GradientField(g / spec.relative_lattice.spacing, spec.relative_lattice)


# --- exact two-particle oracle ---------------------------------------------

def exact_two_body(spec):
    """Ground energy and ordered-pair density from the antisymmetric two-particle Hamiltonian."""
    if spec.n_particles != 2:
        raise ValueError("exact solver handles two particles only")
    n = spec.lattice.n_points
    if n * n > MAX_EXACT_STATES:
        raise ValueError(f"{n}^2 product states exceed the guard of {MAX_EXACT_STATES}")
    t = spec.one_body_matrix()
    w = spec.interaction_matrix()
    i, j = np.triu_indices(n, k=1)
    ii, jj = i[:, None], j[:, None]
    kk, ll = i[None, :], j[None, :]
    h = (t[ii, kk] * (jj == ll) + t[jj, ll] * (ii == kk)
         - t[ii, ll] * (jj == kk) - t[jj, kk] * (ii == ll))
    h[np.diag_indices_from(h)] += w[i, j]
    energies, vecs = np.linalg.eigh(h)
    psi = np.zeros((n, n))
    psi[i, j] = vecs[:, 0] / math.sqrt(2.0)
    psi[j, i] = -vecs[:, 0] / math.sqrt(2.0)
    h2 = spec.lattice.spacing ** 2
    return float(energies[0]), psi**2 / h2


def pair_distance_distribution(pair_density, spec):
    """Probability of each relative cell under an ordered-pair density."""
    bins = spec.distance_bins()
    h2 = spec.lattice.spacing ** 2
    return np.bincount(bins.ravel(), weights=pair_density.ravel() * h2,
                       minlength=spec.relative_lattice.n_points)


# --- reconstruction ----------------------------------------------------------

class HartreeFockProblem:
    """Posterior over the pair potential for zero-temperature N-particle data.

    ``template`` fixes mass, one-body potential and particle number; its
    two-body potential is the reference. Cell 0 and the last relative cell
    are pinned.
    """

    def __init__(self, template, data, priors=(), penalty=None, scf_options=None):
        self.template = template
        self.lattice = template.relative_lattice
        self.data = data
        self.priors = tuple(priors)
        self.penalty = penalty
        self.scf_options = dict(scf_options or {})
        self.idx = (_data_indices(_IndexProxy(template), data) if _count(data)
                    else np.zeros((0, template.n_particles), dtype=int))
        for k, row in enumerate(self.idx):
            if len(set(row.tolist())) < row.size:
                raise NumericalError(f"datum {k} has coincident coordinates")
        self.parameterization = Parameterization.interior(self.lattice)
        self.reference = template.two_body_potential

    @property
    def n_data(self):
        return float(self.idx.shape[0])

    @property
    def gradient_scale(self):
        return max(1.0, self.n_data)

    def _solve(self, v):
        spec = self.template.with_two_body(v)
        return spec, scf_solve(spec, **self.scf_options)

    def evaluate(self, v):
        spec, state = self._solve(v)
        lat = self.lattice
        field_ = spec.two_body_potential
        value = 0.0
        grad = np.zeros(lat.n_points)
        pmin = math.inf
        self._last_rows = None
        if self.idx.shape[0]:
            phi = state.orbitals
            dets = np.array([np.linalg.det(phi[row, :].T) for row in self.idx])
            p = dets**2 / math.factorial(state.n_particles)
            pmin = float(p.min())
            if pmin <= 0:
                return Evaluation(-math.inf, grad, pmin, {})
            value = float(np.log(p).sum())
            rows = per_datum_gradients(state, spec, self.idx_coords(spec))
            grad += rows.sum(axis=0)
            self._last_rows = rows
        for prior in self.priors:
            pv, pg = prior.log_density(field_)
            value += pv
            grad += pg
        if self.penalty is not None and self.penalty.mu > 0:
            value -= energy_penalty_value(self.penalty, state.hf_ground_energy)
            grad -= self.penalty.mu * (state.hf_ground_energy - self.penalty.kappa) * d_hf_energy(
                state, spec).values
        summary = {"U": state.hf_ground_energy, "E0": state.hf_ground_energy, "lnZ": 0.0,
                   "scf_iterations": state.iterations}
        return Evaluation(value, grad, pmin, summary)

    def idx_coords(self, spec):
        return spec.lattice.x[self.idx]

    def precision(self, v):
        if not self.priors:
            raise PreconditionerError("prior-operator preconditioning needs at least one prior")
        return sum(p.precision(v) for p in self.priors)

    def curvature(self, v):
        """Outer-product (empirical Fisher) approximation of the data term."""
        if not self.idx.shape[0]:
            return np.zeros((self.lattice.n_points,) * 2)
        spec, state = self._solve(v)
        rows = per_datum_gradients(state, spec, self.idx_coords(spec))
        return rows.T @ rows * self.lattice.spacing


class _IndexProxy:
    def __init__(self, spec):
        self.lattice = spec.lattice
        self.n_particles = spec.n_particles


def _count(data):
    if data is None:
        return 0
    return len(data) if isinstance(data, Dataset) else np.asarray(data).size


def hf_reconstruct(data, template, prior, config, penalty=None, scf_options=None):
    """MAP estimate of the pair potential with an SCF solve inside every evaluation."""
    priors = prior if isinstance(prior, (list, tuple)) else (prior,)
    problem = HartreeFockProblem(template, data, priors, penalty, scf_options)
    return iterate(config, problem)


def sample_pair_dataset(pair_density, lattice, n, seed):
    """Ordered position pairs from a pair density (per unit area)."""
    from .data import sample_dataset

    d = sample_dataset(pair_density, lattice, n, seed, math.inf, "exact two-body ground state")
    return Dataset(d.samples, observable_for_arity(2), d.beta, d.provenance, d.seed, d.source)
