"""Position datasets: sampling, histograms, noise and text-file round trips.

Samples are drawn with numpy's ``PCG64`` bit generator seeded directly from
the integer seed, so a given (density, n, seed) triple always yields the same
dataset.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DataError

PRNG_NAME = "numpy.random.PCG64"
_TUPLE_RE = re.compile(r"^position_tuple\((\d+)\)$")


def observable_arity(observable):
    if observable == "position":
        return 1
    if observable == "position_pair":
        return 2
    m = _TUPLE_RE.match(observable)
    if m:
        return int(m.group(1))
    raise DataError(f"unknown observable {observable!r}")


def observable_for_arity(arity):
    return {1: "position", 2: "position_pair"}.get(arity, f"position_tuple({arity})")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Measured coordinate tuples, one row per measurement.

    ``provenance`` is ``"sampled"`` (with ``seed`` and ``source``) or
    ``"ingested"`` (with ``source`` holding the path).
    """

    samples: np.ndarray
    observable: str = "position"
    beta: float = math.inf
    provenance: str = "sampled"
    seed: int | None = None
    source: str = ""

    def __post_init__(self):
        arity = observable_arity(self.observable)
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1 and arity == 1:
            s = s.reshape(-1, 1)
        if s.size == 0:
            s = s.reshape(0, arity)
        if s.ndim != 2 or s.shape[1] != arity:
            raise DataError(f"samples of shape {s.shape} do not match observable {self.observable}")
        if not np.all(np.isfinite(s)):
            raise DataError("samples must be finite")
        if not self.beta > 0:
            raise DataError(f"beta must be positive, got {self.beta}")
        if self.provenance not in ("sampled", "ingested"):
            raise DataError(f"unknown provenance {self.provenance!r}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def arity(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @property
    def coordinates(self):
        """Flat coordinate array for single-particle data."""
        if self.arity != 1:
            raise DataError(f"{self.observable} data have no flat coordinate view")
        return self.samples[:, 0]

    def check_domain(self, lattice):
        lattice.index_of(self.samples)

    def concat(self, other):
        if other.observable != self.observable:
            raise DataError("cannot concatenate different observables")
        return Dataset(np.vstack([self.samples, other.samples]), self.observable, self.beta,
                       self.provenance, self.seed, self.source)


def as_coordinates(data):
    """Accept a Dataset or a plain coordinate sequence."""
    if isinstance(data, Dataset):
        return data.coordinates
    return np.asarray(data, dtype=float).ravel()


def cell_counts(data, lattice):
    """Number of data per lattice cell (nearest-cell snapping)."""
    idx = lattice.index_of(as_coordinates(data))
    return np.bincount(idx, minlength=lattice.n_points).astype(float)


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def sample_dataset(density, lattice, n, seed, beta=math.inf, source=""):
    """Draw ``n`` lattice points by inverse-CDF sampling.

    A 1-D ``density`` (per unit length) gives single positions; an ``(n, n)``
    ``density`` over ordered pairs (per unit area) gives position pairs.
    """
    p = np.asarray(density, dtype=float)
    h = lattice.spacing
    npts = lattice.n_points
    if p.shape == (npts,):
        arity, measure = 1, h
    elif p.shape == (npts, npts):
        arity, measure = 2, h * h
    else:
        raise DataError(f"density shape {p.shape} does not fit a {npts}-point lattice")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DataError("density must be finite and non-negative")
    total = p.sum() * measure
    if abs(total - 1.0) > 1e-8:
        raise DataError(f"density integrates to {total!r}, not 1")
    n = int(n)
    if n < 0:
        raise DataError("sample count must be non-negative")
    cdf = np.cumsum(p.ravel() * measure)
    u = _rng(seed).random(n) * cdf[-1]
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    x = lattice.x
    if arity == 1:
        samples = x[flat].reshape(-1, 1)
    else:
        i, j = np.divmod(flat, npts)
        samples = np.column_stack([x[i], x[j]])
    return Dataset(samples, observable_for_arity(arity), beta, "sampled", int(seed), source)


def empirical_density(data, lattice):
    """Histogram ``n(x) / (n * spacing)`` of single-particle data."""
    counts = cell_counts(data, lattice)
    n = counts.sum()
    if n == 0:
        raise DataError("empirical density of an empty dataset")
    return counts / (n * lattice.spacing)


def symmetrized_density(p):
    """``(P(x) + P(-x)) / 2`` about the lattice midpoint."""
    p = np.asarray(p, dtype=float)
    return 0.5 * (p + p[::-1])


def _reflect(x, lo, hi):
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    return lo + np.where(y > width, 2.0 * width - y, y)


def gaussian_noise_blur(data, sigma, seed, lattice):
    """Add seeded Gaussian noise of width ``sigma``; reflect at the domain edges.

    The reflecting edges are the first and last lattice points.
    """
    if not sigma > 0:
        raise DataError("sigma must be positive")
    s = data.samples
    noisy = s + sigma * _rng(seed).standard_normal(s.shape)
    x = lattice.x
    noisy = _reflect(noisy, x[0], x[-1])
    return Dataset(noisy, data.observable, data.beta, data.provenance, data.seed,
                   f"{data.source}+blur(sigma={sigma!r},seed={seed})")


def pair_distance_cells(data, lattice):
    """Relative distance ``|x1 - x2|`` of pair data in lattice cells."""
    idx = lattice.index_of(data.samples)
    return np.abs(idx[:, 0] - idx[:, 1])


# --- file round trip --------------------------------------------------------

def _fmt(v):
    return format(float(v), ".17g")


def write_dataset(data, path):
    lines = [
        f"# observable={data.observable}",
        f"# beta={_fmt(data.beta)}",
        f"# seed={'none' if data.seed is None else data.seed}",
        f"# provenance={data.provenance}",
    ]
    if data.source:
        lines.append(f"# source={data.source}")
    for row in data.samples:
        lines.append(" ".join(_fmt(c) for c in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path):
    header = {}
    rows = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, val = line[1:].strip().partition("=")
                if sep:
                    header[key.strip()] = val.strip()
                continue
            try:
                rows.append([float(t) for t in line.split()])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: cannot parse {line!r}") from exc
    observable = header.get("observable", "position")
    arity = observable_arity(observable)
    if any(len(r) != arity for r in rows):
        raise DataError(f"{path}: every line must hold {arity} coordinate(s)")
    seed = header.get("seed", "none")
    return Dataset(
        np.array(rows, dtype=float).reshape(-1, arity),
        observable,
        float(header.get("beta", "inf")),
        header.get("provenance", "ingested"),
        None if seed == "none" else int(seed),
        header.get("source", str(path)),
    )


def ingest_dataset(path):
    """Read a dataset file and mark it as ingested from ``path``."""
    d = read_dataset(path)
    return Dataset(d.samples, d.observable, d.beta, "ingested", d.seed, str(path))
