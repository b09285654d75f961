"""Inner-loop kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and the environment variable
``INVQUANT_NUMBA`` is not set to ``0``. Both paths are importable by name
(``*_numpy`` / ``*_numba``) so tests and benchmarks can compare them.
"""

import os

import numpy as np

_WANT_NUMBA = os.environ.get("INVQUANT_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError("numba disabled by INVQUANT_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAS_NUMBA else "numpy"


# --- quantum likelihood gradient -------------------------------------------

def diag_sandwich_numpy(u, m):
    """``out_j = sum_ab u[j,a] m[a,b] u[j,b]``, i.e. the diagonal of ``u m u^T``."""
    return np.einsum("ja,ja->j", u @ m, u)


def _diag_sandwich_loops(u, m):
    n, k = u.shape
    out = np.zeros(n)
    for j in range(n):
        acc = 0.0
        for a in range(k):
            ua = u[j, a]
            if ua == 0.0:
                continue
            row = 0.0
            for b in range(k):
                row += m[a, b] * u[j, b]
            acc += ua * row
        out[j] = acc
    return out


# --- Hartree-Fock mean field ------------------------------------------------

def mean_field_numpy(w, rho):
    """Hartree minus exchange: ``diag(w @ diag(rho)) - w * rho``."""
    return np.diag(w @ np.diag(rho)) - w * rho


def _mean_field_loops(w, rho):
    n = w.shape[0]
    out = np.empty((n, n))
    for x in range(n):
        hartree = 0.0
        for z in range(n):
            hartree += w[x, z] * rho[z, z]
        for y in range(n):
            out[x, y] = -w[x, y] * rho[x, y]
        out[x, x] += hartree
    return out


def projected_mean_field_numpy(u_left, u_right, w, rhos):
    """``t[d,l,k] = u_left[:,l] . G(w, rhos[d]) . u_right[:,k]``.

    ``G(w, r) = diag(w @ diag(r)) - w * r`` is the mean-field map.
    """
    dens = np.einsum("dxx->dx", rhos)
    hartree = dens @ w.T
    t = np.einsum("xl,xk,dx->dlk", u_left, u_right, hartree)
    t -= np.einsum("xl,dxy,yk->dlk", u_left, w[None, :, :] * rhos, u_right, optimize=True)
    return t


def _projected_mean_field_loops(u_left, u_right, w, rhos):
    nd, n, _ = rhos.shape
    nl = u_left.shape[1]
    nk = u_right.shape[1]
    t = np.zeros((nd, nl, nk))
    for d in range(nd):
        for x in range(n):
            hartree = 0.0
            for z in range(n):
                hartree += w[x, z] * rhos[d, z, z]
            for k in range(nk):
                # (G u_k)(x) = hartree * u_k(x) - sum_y w[x,y] rho[x,y] u_k(y)
                g = hartree * u_right[x, k]
                for y in range(n):
                    g -= w[x, y] * rhos[d, x, y] * u_right[y, k]
                for l in range(nl):
                    t[d, l, k] += u_left[x, l] * g
    return t


def binned_mean_field_numpy(u_left, u_right, rho, bins, n_bins):
    """Source terms ``s[d,l,k] = u_left[:,l] . dG/dv_d . u_right[:,k]``.

    ``bins[x, y]`` is the relative-distance cell of the pair; the mean field is
    linear in the two-body potential so ``dG/dv_d = G(E_d, rho)`` with
    ``E_d = (bins == d)``.
    """
    dens = np.diag(rho)
    out = np.zeros((n_bins, u_left.shape[1], u_right.shape[1]))
    for d in range(n_bins):
        e = (bins == d).astype(float)
        if not e.any():
            continue
        g = np.diag(e @ dens) - e * rho
        out[d] = u_left.T @ g @ u_right
    return out


def _binned_mean_field_loops(u_left, u_right, rho, bins, n_bins):
    n = rho.shape[0]
    nl = u_left.shape[1]
    nk = u_right.shape[1]
    out = np.zeros((n_bins, nl, nk))
    for x in range(n):
        for y in range(n):
            d = bins[x, y]
            ryy = rho[y, y]
            rxy = rho[x, y]
            for l in range(nl):
                ul = u_left[x, l]
                if ul == 0.0:
                    continue
                for k in range(nk):
                    out[d, l, k] += ul * (u_right[x, k] * ryy - rxy * u_right[y, k])
    return out


if HAS_NUMBA:
    diag_sandwich_numba = njit(cache=True)(_diag_sandwich_loops)
    mean_field_numba = njit(cache=True)(_mean_field_loops)
    projected_mean_field_numba = njit(cache=True)(_projected_mean_field_loops)
    binned_mean_field_numba = njit(cache=True)(_binned_mean_field_loops)

    diag_sandwich = diag_sandwich_numba
    mean_field = mean_field_numba
    projected_mean_field = projected_mean_field_numba
    binned_mean_field = binned_mean_field_numba
else:
    diag_sandwich_numba = mean_field_numba = None
    projected_mean_field_numba = binned_mean_field_numba = None

    diag_sandwich = diag_sandwich_numpy
    mean_field = mean_field_numpy
    projected_mean_field = projected_mean_field_numpy
    binned_mean_field = binned_mean_field_numpy


def contiguous(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)
