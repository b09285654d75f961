"""Experiment configuration: sectioned INI files with a closed set of keys.

Unknown sections or keys are errors. Potentials are numpy expressions in the
lattice coordinate ``x`` (or ``r`` for relative distances), evaluated with a
restricted namespace. ``resolved_text`` renders every key, defaults included.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError

_FUNCS = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "cosh", "sinh",
                 "where", "minimum", "maximum", "clip", "heaviside", "sign")
}
_FUNCS.update(pi=math.pi, e=math.e, inf=math.inf)


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# section -> key -> (kind, default, check); default None means required
SCHEMA = {
    "experiment": {
        "pipeline": (("quantum", "classical", "hf"), None, None),
        "description": ("str", "", None),
        "seed": ("int", "0", _nonneg),
        "n_data": ("int", "200", _nonneg),
        "data_file": ("path", "", None),
        "blur_sigma": ("float", "0", _nonneg),
    },
    "lattice": {
        "n_points": ("int", None, lambda v: v >= 3),
        "spacing": ("float", "1.0", _pos),
        "origin": ("float", "0.0", None),
        "centered": ("bool", "false", None),
        "wavefn_boundary": (("dirichlet", "periodic"), "dirichlet", None),
        "operator_boundary": (("dirichlet", "periodic"), "dirichlet", None),
    },
    "physics": {
        "mass": ("float", "1.0", _pos),
        "beta": ("float", "1.0", _pos),
        "true_potential": ("expr", "", None),
    },
    "prior": {
        "kind": (("gaussian", "mixture"), "gaussian", None),
        "operator": (("laplacian", "rbf", "identity", "identity_laplacian"), "laplacian", None),
        "sigma_rbf": ("float", "1.0", _pos),
        "scale": ("float", "1.0", _pos),
        "reference": ("expr", "0", None),
        "references": ("exprlist", "", None),
        "weights": ("floatlist", "", None),
        "symmetric": ("bool", "false", None),
        "degenerate": (("confluent", "exclude"), "confluent", None),
    },
    "penalty": {
        "mu": ("float", "0", _nonneg),
        "kappa": ("kappa", "true", None),
    },
    "optimizer": {
        "preconditioner": (("identity", "prior", "gauss_newton"), "prior", None),
        "step_eta": ("float", "0.5", lambda v: 0 < v <= 1),
        "max_iterations": ("int", "500", _nonneg),
        "gradient_tolerance": ("float", "1e-6", _pos),
        "posterior_tolerance": ("float", "1e-10", _pos),
        "step_growth": ("float", "1.5", lambda v: v > 1),
        "step_shrink": ("float", "0.5", lambda v: 0 < v < 1),
        "initial_guess": (("reference", "delta_peaks"), "reference", None),
    },
    "hf": {
        "n_particles": ("int", "2", lambda v: v >= 1),
        "relative_points": ("int", "21", lambda v: v >= 2),
        "one_body_potential": ("expr", "0", None),
        "scf_mixing": ("float", "0.5", lambda v: 0 < v <= 1),
        "scf_tol": ("float", "1e-11", _pos),
        "max_scf": ("int", "500", _pos),
    },
}

RECIPE_PACKAGE = "invquant.recipes"


def evaluate_expression(text, **coords):
    """Evaluate a potential expression; the result is broadcast to the coordinate shape."""
    ns = dict(_FUNCS)
    ns.update(coords)
    shape = next(iter(coords.values())).shape
    try:
        # non-finite results are reported below, so numpy's own warnings are redundant
        with np.errstate(all="ignore"):
            val = eval(compile(text, "<potential>", "eval"), {"__builtins__": {}}, ns)  # noqa: S307
    except Exception as exc:
        raise ConfigError(f"cannot evaluate potential {text!r}: {exc}") from exc
    out = np.broadcast_to(np.asarray(val, dtype=float), shape).copy()
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"potential {text!r} has non-finite values")
    return out


def _parse(section, key, kind, raw, base_dir):
    where = f"[{section}] {key}"
    try:
        if isinstance(kind, tuple):
            val = raw.strip().lower()
            if val not in kind:
                raise ValueError(f"must be one of {', '.join(kind)}")
            return val
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError("must be a boolean")
            return low in ("true", "yes", "1", "on")
        if kind in ("str", "expr"):
            return raw.strip()
        if kind == "exprlist":
            return [t.strip() for t in raw.split(";") if t.strip()]
        if kind == "floatlist":
            return [float(t) for t in raw.replace(";", ",").split(",") if t.strip()]
        if kind == "kappa":
            low = raw.strip().lower()
            return "true" if low == "true" else float(raw)
        if kind == "path":
            if not raw.strip():
                return ""
            p = Path(raw.strip())
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.exists():
                raise ValueError(f"file {p} does not exist")
            return str(p)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise AssertionError(kind)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration: ``values[section][key]`` for every schema key."""

    values: dict
    source: str = ""

    def __getitem__(self, section):
        return self.values[section]

    @property
    def pipeline(self):
        return self.values["experiment"]["pipeline"]

    def with_overrides(self, **sections):
        vals = {s: dict(k) for s, k in self.values.items()}
        for s, kv in sections.items():
            for k, v in kv.items():
                if k not in SCHEMA[s]:
                    raise ConfigError(f"unknown key [{s}] {k}")
                vals[s][k] = v
        return ExperimentConfig(vals, self.source)

    def resolved_text(self):
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_render(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        sep = "; " if v and isinstance(v[0], str) else ", "
        return sep.join(repr(t) if isinstance(t, float) else str(t) for t in v)
    return str(v)


def parse_config(text, source="", base_dir=None):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";;"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default, check) in keys.items():
            if cp.has_option(section, key):
                raw = cp[section][key]
            elif default is None:
                raise ConfigError(f"[{section}] {key} is required")
            else:
                raw = default
            val = _parse(section, key, kind, raw, base_dir)
            if check is not None and not check(val):
                raise ConfigError(f"[{section}] {key} = {raw!r} is out of range")
            values[section][key] = val
    _cross_check(values)
    return ExperimentConfig(values, source)


def _cross_check(v):
    prior = v["prior"]
    if prior["kind"] == "mixture":
        if not prior["references"]:
            raise ConfigError("[prior] references is required for a mixture prior")
        if len(prior["weights"]) != len(prior["references"]):
            raise ConfigError("[prior] weights needs one entry per reference")
        if any(w <= 0 for w in prior["weights"]) or abs(sum(prior["weights"]) - 1) > 1e-12:
            raise ConfigError("[prior] weights must be positive and sum to 1")
    if v["experiment"]["pipeline"] == "hf":
        if v["hf"]["n_particles"] > v["lattice"]["n_points"]:
            raise ConfigError("[hf] n_particles exceeds the lattice size")


def load_config(path):
    """Load a config file, or a shipped recipe when ``path`` names one."""
    p = Path(path)
    if p.exists():
        return parse_config(p.read_text(encoding="utf-8"), str(p), p.parent)
    name = p.name if p.suffix == ".ini" else f"{p.name}.ini"
    res = resources.files(RECIPE_PACKAGE) / name
    if res.is_file():
        return parse_config(res.read_text(encoding="utf-8"), f"recipe:{p.stem}", None)
    raise ConfigError(f"no config file or shipped recipe named {path!r}")


def recipe_names():
    return sorted(r.name[:-4] for r in resources.files(RECIPE_PACKAGE).iterdir()
                  if r.name.endswith(".ini"))
