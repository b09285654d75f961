"""Both kernel paths must agree; the numba path is skipped when numba is absent."""

import numpy as np
import pytest

from invquant import _kernels

PATHS = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])


def _inputs(seed=0, n=13, k=3, nd=7):
    r = np.random.default_rng(seed)
    u = np.linalg.qr(r.standard_normal((n, n)))[0]
    m = r.standard_normal((n, n))
    w = r.standard_normal((n, n))
    w = w + w.T
    rho = u[:, :k] @ u[:, :k].T
    rhos = r.standard_normal((nd, n, n))
    i = np.arange(n)
    bins = np.minimum(np.abs(i[:, None] - i[None, :]), nd - 1).astype(np.int64)
    return u, m + m.T, w, rho, rhos, bins, k, nd


def _kernel(name, path):
    fn = getattr(_kernels, f"{name}_{path}")
    if fn is None:
        pytest.skip("numba unavailable")
    return fn


@pytest.mark.parametrize("path", PATHS)
class TestKernelPaths:
    def test_diag_sandwich(self, path):
        u, m, *_ = _inputs()
        np.testing.assert_allclose(_kernel("diag_sandwich", path)(u, m), np.diag(u @ m @ u.T), atol=1e-12)

    def test_mean_field(self, path):
        _, _, w, rho, *_ = _inputs()
        expect = np.diag(w @ np.diag(rho)) - w * rho
        np.testing.assert_allclose(_kernel("mean_field", path)(w, rho), expect, atol=1e-12)

    def test_projected_mean_field(self, path):
        u, _, w, _, rhos, _, k, nd = _inputs()
        out = _kernel("projected_mean_field", path)(u, u[:, :k], w, rhos)
        for d in range(nd):
            g = np.diag(w @ np.diag(rhos[d])) - w * rhos[d]
            np.testing.assert_allclose(out[d], u.T @ g @ u[:, :k], atol=1e-11)

    def test_binned_mean_field(self, path):
        u, _, _, rho, _, bins, k, nd = _inputs()
        out = _kernel("binned_mean_field", path)(u, u[:, :k], rho, bins, nd)
        for d in range(nd):
            e = (bins == d).astype(float)
            g = np.diag(e @ np.diag(rho)) - e * rho
            np.testing.assert_allclose(out[d], u.T @ g @ u[:, :k], atol=1e-11)


def test_backend_name_consistent():
    assert _kernels.BACKEND == ("numba" if _kernels.HAS_NUMBA else "numpy")
    if _kernels.HAS_NUMBA:
        assert _kernels.mean_field is _kernels.mean_field_numba
    else:
        assert _kernels.mean_field is _kernels.mean_field_numpy


def test_env_flag_selects_numpy(tmp_path):
    import os
    import subprocess
    import sys

    code = "from invquant import _kernels; print(_kernels.BACKEND)"
    env = dict(os.environ, INVQUANT_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
