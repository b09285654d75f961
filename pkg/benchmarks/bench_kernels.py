"""Time the numba kernels against their numpy fallbacks, then whole recipes per backend.

    python benchmarks/bench_kernels.py [--repeat N]

The recipe timings run in subprocesses with INVQUANT_NUMBA=1 and =0 so each
backend is selected the same way users select it.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from invquant import _kernels

RECIPE_SNIPPET = """
import time
from invquant import _kernels
from invquant.config import load_config
from invquant.pipelines import run_pipeline
cfg = load_config({name!r})
run_pipeline(cfg)  # warm up (numba compile, caches)
t = time.perf_counter()
for _ in range({repeat}):
    run_pipeline(cfg)
print(_kernels.BACKEND, (time.perf_counter() - t) / {repeat})
"""


def kernel_inputs(n, k, nd, seed=0):
    rng = np.random.default_rng(seed)
    u = np.linalg.qr(rng.standard_normal((n, n)))[0]
    m = rng.standard_normal((n, n))
    w = rng.standard_normal((n, n))
    w = w + w.T
    rho = u[:, :k] @ u[:, :k].T
    rhos = rng.standard_normal((nd, n, n))
    i = np.arange(n)
    bins = np.minimum(np.abs(i[:, None] - i[None, :]), nd - 1).astype(np.int64)
    return {
        "diag_sandwich": ((u, m + m.T),),
        "mean_field": ((w, rho),),
        "projected_mean_field": ((u, u[:, :k], w, rhos),),
        "binned_mean_field": ((u, u[:, :k], rho, bins, nd),),
    }


def time_call(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def bench_kernels(repeat):
    print(f"{'kernel':<22}{'size':>10}{'numpy [ms]':>13}{'numba [ms]':>13}{'max |diff|':>12}")
    for n, k, nd in ((31, 2, 21), (64, 4, 40)):
        for name, (args,) in kernel_inputs(n, k, nd).items():
            np_fn = getattr(_kernels, f"{name}_numpy")
            nb_fn = getattr(_kernels, f"{name}_numba")
            t_np = time_call(np_fn, args, repeat) * 1e3
            if nb_fn is None:
                print(f"{name:<22}{n:>10}{t_np:>13.3f}{'n/a':>13}{'':>12}")
                continue
            t_nb = time_call(nb_fn, args, repeat) * 1e3
            diff = np.abs(np.asarray(np_fn(*args)) - np.asarray(nb_fn(*args))).max()
            print(f"{name:<22}{n:>10}{t_np:>13.3f}{t_nb:>13.3f}{diff:>12.1e}")


def bench_recipes(names, repeat):
    print(f"\n{'recipe':<18}{'backend':>10}{'seconds/run':>14}")
    for name in names:
        for flag in ("1", "0"):
            env = dict(os.environ, INVQUANT_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", RECIPE_SNIPPET.format(name=name, repeat=repeat)],
                                 env=env, capture_output=True, text=True, check=True).stdout.split()
            print(f"{name:<18}{out[0]:>10}{float(out[1]):>14.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--recipes", nargs="*", default=["periodic", "symmetric_rbf7", "hf_sigmoid"])
    args = ap.parse_args()
    print(f"default backend: {_kernels.BACKEND}\n")
    bench_kernels(args.repeat)
    bench_recipes(args.recipes, max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
