"""Config-driven experiment pipelines and their on-disk outputs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classical import ClassicalProblem, classical_likelihood, classical_map
from .config import evaluate_expression
from .data import (PRNG_NAME, Dataset, empirical_density, gaussian_noise_blur, ingest_dataset,
                   pair_distance_cells, sample_dataset, write_dataset)
from .errors import ConfigError, DataError
from .hartree_fock import (TwoBodySpec, exact_two_body, hf_reconstruct, pair_distance_distribution,
                           scf_solve, slater_pair_density)
from .lattice import (Lattice, PotentialField, build_laplacian, build_truncated_rbf,
                      identity_operator)
from .optimizer import (OptimizerConfig, Parameterization, QuantumProblem, iterate)
from .priors import EnergyPenalty, GaussianPrior, MixturePrior
from .spectral import position_likelihood, solve

CURVE_COLUMNS = ("x", "v_true", "v_ref", "v_rec", "p_true", "p_emp", "p_rec")


@dataclass(eq=False)
class RunOutput:
    pipeline: str
    result: object
    dataset: Dataset
    curves: dict
    extras: dict = field(default_factory=dict)


# --- builders ----------------------------------------------------------------

def build_lattice(cfg):
    c = cfg["lattice"]
    if c["centered"]:
        return Lattice.centered(c["n_points"], c["spacing"], c["wavefn_boundary"])
    return Lattice(c["n_points"], c["spacing"], c["origin"], c["wavefn_boundary"])


def relative_lattice(cfg):
    return Lattice(cfg["hf"]["relative_points"], cfg["lattice"]["spacing"])


def field_from(expr, lattice, relative=False):
    coords = {"r" if relative else "x": lattice.x}
    if not relative:
        coords["r"] = lattice.x
    return PotentialField(evaluate_expression(expr, **coords), lattice)


def true_potential(cfg, lattice, relative=False):
    expr = cfg["physics"]["true_potential"]
    if not expr:
        return None
    v = field_from(expr, lattice, relative)
    if relative:
        # distance 0 never enters; keep the spec invariant v(0) = 0
        vals = v.values.copy()
        vals[0] = 0.0
        v = PotentialField(vals, lattice)
    return v


def build_operator(cfg, lattice):
    p = cfg["prior"]
    lat = lattice.with_boundary(cfg["lattice"]["operator_boundary"])
    if p["operator"] == "laplacian":
        op = -build_laplacian(lat)
    elif p["operator"] == "rbf":
        op = build_truncated_rbf(lat, p["sigma_rbf"])
    elif p["operator"] == "identity":
        op = identity_operator(lat)
    else:
        op = (identity_operator(lat) + (-build_laplacian(lat))) * 0.5
    return type(op)(op.matrix, lattice)


def build_prior(cfg, lattice, relative=False):
    p = cfg["prior"]
    op = build_operator(cfg, lattice)

    def ref(expr):
        f = field_from(expr, lattice, relative)
        if relative:
            vals = f.values.copy()
            vals[0] = 0.0
            f = PotentialField(vals, lattice)
        return f

    if p["kind"] == "gaussian":
        return GaussianPrior(ref(p["reference"]), op, p["scale"])
    comps = tuple(GaussianPrior(ref(e), op, p["scale"]) for e in p["references"])
    return MixturePrior(tuple(p["weights"]), comps)


def optimizer_config(cfg):
    o = cfg["optimizer"]
    return OptimizerConfig(
        step_eta=o["step_eta"], preconditioner=o["preconditioner"],
        max_iterations=o["max_iterations"], gradient_tolerance=o["gradient_tolerance"],
        posterior_tolerance=o["posterior_tolerance"], step_growth=o["step_growth"],
        step_shrink=o["step_shrink"], initial_guess=o["initial_guess"],
    )


def _parameterization(cfg, lattice):
    if cfg["prior"]["symmetric"]:
        return Parameterization.symmetric(lattice)
    return Parameterization.interior(lattice)


def _hf_template(cfg, lattice, v2):
    h = cfg["hf"]
    v1 = field_from(h["one_body_potential"], lattice)
    return TwoBodySpec(cfg["physics"]["mass"], v1, v2, h["n_particles"],
                       cfg["lattice"]["wavefn_boundary"])


def _scf_options(cfg):
    h = cfg["hf"]
    return {"mixing": h["scf_mixing"], "tol": h["scf_tol"], "max_scf": h["max_scf"]}


# --- data ----------------------------------------------------------------------

def sampling_density(cfg):
    """True density used for sampling: thermal one-body or exact pair density."""
    lat = build_lattice(cfg)
    phys = cfg["physics"]
    if cfg.pipeline == "hf":
        rl = relative_lattice(cfg)
        vt = true_potential(cfg, rl, relative=True)
        if vt is None:
            raise ConfigError("[physics] true_potential is needed to sample pair data")
        if cfg["hf"]["n_particles"] != 2:
            raise ConfigError("pair sampling needs [hf] n_particles = 2")
        return lat, exact_two_body(_hf_template(cfg, lat, vt))[1]
    vt = true_potential(cfg, lat)
    if vt is None:
        raise ConfigError("[physics] true_potential is needed to sample data")
    dec, ens = solve(phys["mass"], vt, phys["beta"], cfg["lattice"]["wavefn_boundary"])
    return lat, position_likelihood(dec, ens)


def sample_data(cfg, seed=None):
    exp = cfg["experiment"]
    seed = exp["seed"] if seed is None else seed
    lat, dens = sampling_density(cfg)
    beta = math.inf if cfg.pipeline == "hf" else cfg["physics"]["beta"]
    data = sample_dataset(dens, lat, exp["n_data"], seed, beta, "true potential")
    if exp["blur_sigma"] > 0:
        # blur noise uses the next seed so the clean sample is unchanged
        data = gaussian_noise_blur(data, exp["blur_sigma"], seed + 1, lat)
    return data


def load_or_sample(cfg):
    path = cfg["experiment"]["data_file"]
    data = ingest_dataset(path) if path else sample_data(cfg)
    want = 2 if cfg.pipeline == "hf" else 1
    if data.arity != want:
        raise DataError(f"{cfg.pipeline} pipeline needs {want}-coordinate data, got {data.observable}")
    data.check_domain(build_lattice(cfg))
    return data


# --- pipelines -----------------------------------------------------------------

def _kappa(cfg, true_energy):
    k = cfg["penalty"]["kappa"]
    if k == "true":
        if true_energy is None:
            raise ConfigError("[penalty] kappa = true needs [physics] true_potential")
        return true_energy
    return k


def run_quantum(cfg, data=None, mass=None):
    lat = build_lattice(cfg)
    phys = cfg["physics"]
    mass = phys["mass"] if mass is None else mass
    wb = cfg["lattice"]["wavefn_boundary"]
    data = load_or_sample(cfg) if data is None else data
    prior = build_prior(cfg, lat)
    vt = true_potential(cfg, lat)
    p_true = u_true = None
    if vt is not None:
        dec, ens = solve(mass, vt, phys["beta"], wb)
        p_true, u_true = position_likelihood(dec, ens), ens.average_energy
    penalty = None
    if cfg["penalty"]["mu"] > 0:
        penalty = EnergyPenalty(cfg["penalty"]["mu"], _kappa(cfg, u_true))
    problem = QuantumProblem(lat, mass, phys["beta"], data, [prior], penalty, wb,
                             parameterization=_parameterization(cfg, lat),
                             degenerate=cfg["prior"]["degenerate"])
    result = iterate(optimizer_config(cfg), problem)
    dec, ens = solve(mass, result.potential, phys["beta"], wb)
    curves = {
        "x": lat.x, "v_true": None if vt is None else vt.values,
        "v_ref": prior.mean.values if isinstance(prior, GaussianPrior) else None,
        "v_rec": result.potential.values, "p_true": p_true,
        "p_emp": empirical_density(data, lat) if len(data) else None,
        "p_rec": position_likelihood(dec, ens),
    }
    extras = {"kappa": None if penalty is None else penalty.kappa, "U_true": u_true,
              "U_rec": ens.average_energy, "mass": mass}
    return RunOutput("quantum", result, data, curves, extras)


def run_classical(cfg, data=None):
    lat = build_lattice(cfg)
    beta = cfg["physics"]["beta"]
    if cfg["penalty"]["mu"] > 0:
        raise ConfigError("the classical pipeline takes no energy penalty; set [penalty] mu = 0")
    data = load_or_sample(cfg) if data is None else data
    prior = build_prior(cfg, lat)
    if not isinstance(prior, GaussianPrior):
        raise ConfigError("the classical pipeline needs a gaussian prior")
    problem = ClassicalProblem(beta, data, prior, lat, _parameterization(cfg, lat))
    result = classical_map(problem, optimizer_config(cfg))
    vt = true_potential(cfg, lat)
    curves = {
        "x": lat.x, "v_true": None if vt is None else vt.values, "v_ref": prior.mean.values,
        "v_rec": result.potential.values,
        "p_true": None if vt is None else classical_likelihood(vt, beta),
        "p_emp": empirical_density(data, lat) if len(data) else None,
        "p_rec": classical_likelihood(result.potential, beta),
    }
    return RunOutput("classical", result, data, curves, {})


def run_hf(cfg, data=None):
    lat = build_lattice(cfg)
    rl = relative_lattice(cfg)
    data = load_or_sample(cfg) if data is None else data
    prior = build_prior(cfg, rl, relative=True)
    if not isinstance(prior, GaussianPrior):
        raise ConfigError("the hf pipeline needs a gaussian prior")
    template = _hf_template(cfg, lat, prior.mean)
    vt = true_potential(cfg, rl, relative=True)
    p_true = e_true = e_hf_true = None
    penalty = None
    if vt is not None:
        tspec = template.with_two_body(vt)
        if template.n_particles == 2:
            e_true, pair = exact_two_body(tspec)
            p_true = pair_distance_distribution(pair, tspec) / rl.spacing
        if cfg["penalty"]["mu"] > 0:
            e_hf_true = scf_solve(tspec, **_scf_options(cfg)).hf_ground_energy
    if cfg["penalty"]["mu"] > 0:
        # the penalty acts on the HF energy, so its target is the HF energy of the truth
        penalty = EnergyPenalty(cfg["penalty"]["mu"], _kappa(cfg, e_hf_true))
    result = hf_reconstruct(data, template, prior, optimizer_config(cfg), penalty,
                            _scf_options(cfg))
    p_rec = None
    if template.n_particles == 2:
        rspec = template.with_two_body(result.potential)
        state = scf_solve(rspec, **_scf_options(cfg))
        p_rec = pair_distance_distribution(slater_pair_density(state), rspec) / rl.spacing
    p_emp = None
    if len(data) and template.n_particles == 2:
        cells = np.minimum(pair_distance_cells(data, lat), rl.n_points - 1)
        p_emp = np.bincount(cells, minlength=rl.n_points) / (len(data) * rl.spacing)
    curves = {"x": rl.x, "v_true": None if vt is None else vt.values, "v_ref": prior.mean.values,
              "v_rec": result.potential.values, "p_true": p_true, "p_emp": p_emp, "p_rec": p_rec}
    extras = {"E_exact": e_true, "E_hf_true": e_hf_true,
              "kappa": None if penalty is None else penalty.kappa}
    return RunOutput("hf", result, data, curves, extras)


PIPELINES = {"quantum": run_quantum, "classical": run_classical, "hf": run_hf}


def run_pipeline(cfg):
    return PIPELINES[cfg.pipeline](cfg)


# --- outputs -------------------------------------------------------------------

def curves_csv(curves):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    n = len(curves["x"])
    for i in range(n):
        w.writerow(["" if curves.get(c) is None else repr(float(curves[c][i])) for c in CURVE_COLUMNS])
    return buf.getvalue()


def read_curves(path):
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for c in CURVE_COLUMNS:
        vals = [r[c] for r in rows]
        out[c] = None if all(v == "" for v in vals) else np.array([float(v) for v in vals])
    return out


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(t) for t in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(t) for t in v]
    if isinstance(v, dict):
        return {str(k): _plain(t) for k, t in v.items()}
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def result_record(run, cfg):
    r = run.result
    return _plain({
        "pipeline": run.pipeline,
        "config_source": cfg.source,
        "x": run.curves["x"],
        "potential": r.potential.values,
        "log_posterior_trace": list(r.log_posterior_trace),
        "final_gradient_norm": r.final_gradient_norm,
        "iterations_used": r.iterations_used,
        "converged": r.converged,
        "stop_reason": r.stop_reason,
        "ensemble_summary": r.ensemble_summary,
        "responsibilities": r.responsibilities,
        "optimizer": r.metadata,
        "operator_boundary": cfg["lattice"]["operator_boundary"],
        "data": {"n": len(run.dataset), "provenance": run.dataset.provenance,
                 "seed": run.dataset.seed, "source": run.dataset.source, "prng": PRNG_NAME},
        "extras": run.extras,
    })


def write_config_copy(out_dir, cfg):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.resolved_text(), encoding="utf-8")


def write_outputs(out_dir, cfg, run):
    out = Path(out_dir)
    write_config_copy(out, cfg)
    write_dataset(run.dataset, out / "dataset.txt")
    (out / "result.json").write_text(json.dumps(result_record(run, cfg), sort_keys=True, indent=1) + "\n",
                                     encoding="utf-8")
    (out / "curves.csv").write_text(curves_csv(run.curves), encoding="ascii")
