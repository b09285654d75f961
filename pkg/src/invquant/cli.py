"""Command-line entry point.

Exit codes: 0 success, 2 config or data error, 3 numerical failure,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import load_config, recipe_names
from .data import write_dataset
from .errors import ConfigError, ConvergenceError, DataError, DomainError, LatticeMismatchError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4

log = logging.getLogger("invquant")

# subcommand -> pipeline it runs
PIPELINE_COMMANDS = {"reconstruct": "quantum", "classical": "classical", "hf": "hf"}


def _load(args, path=None):
    cfg = load_config(path or args.config)
    over = {}
    if args.seed is not None:
        over["experiment"] = {"seed": args.seed}
    if getattr(args, "data", None):
        p = Path(args.data)
        if not p.exists():
            raise ConfigError(f"--data: file {p} does not exist")
        over.setdefault("experiment", {})["data_file"] = str(p)
    return cfg.with_overrides(**over) if over else cfg


def _check_pipeline(cfg, command):
    want = PIPELINE_COMMANDS.get(command)
    if want and cfg.pipeline != want:
        hint = {v: k for k, v in PIPELINE_COMMANDS.items()}[cfg.pipeline]
        raise ConfigError(f"[experiment] pipeline = {cfg.pipeline} does not match '{command}'; "
                          f"use '{hint}'")


def _run_one(command, cfg, out):
    from .pipelines import run_pipeline, write_outputs

    _check_pipeline(cfg, command)
    run = run_pipeline(cfg)
    write_outputs(out, cfg, run)
    r = run.result
    log.info("%s: %d iterations, stop=%s, log posterior %.10g", cfg.source, r.iterations_used,
             r.stop_reason, r.log_posterior_trace[-1])
    if not r.converged and cfg["optimizer"]["max_iterations"] > 0:
        log.error("not converged after %d iterations (gradient norm %.3e)", r.iterations_used,
                  r.final_gradient_norm)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _guarded(fn, *a):
    try:
        return fn(*a)
    except (ConfigError, DataError, DomainError, LatticeMismatchError, OSError) as exc:
        log.error("config/data error: %s", exc)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        log.error("not converged: %s", exc)
        return EXIT_NOT_CONVERGED
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


def _sweep_worker(command, path, out, seed, verbose):
    _logging(verbose)
    ns = argparse.Namespace(config=path, seed=seed, data=None)
    return _guarded(lambda: _run_one(command, _load(ns), out))


def _sweep(args):
    if not args.out:
        raise ConfigError("--sweep needs --out")
    base = Path(args.sweep).parent
    paths = []
    for line in Path(args.sweep).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            p = Path(line)
            paths.append(str(p if p.is_absolute() or not (base / p).exists() else base / p))
    if not paths:
        raise ConfigError(f"sweep file {args.sweep} lists no configs")
    outs = [Path(args.out) / f"{i:03d}_{Path(p).stem}" for i, p in enumerate(paths)]
    with ProcessPoolExecutor() as pool:
        codes = list(pool.map(_sweep_worker, [args.command] * len(paths), paths, outs,
                              [args.seed] * len(paths), [args.verbose] * len(paths)))
    for p, o, c in zip(paths, outs, codes):
        print(f"{c}  {p} -> {o}")
    return max(codes)


def cmd_sample(args):
    from .pipelines import sample_data, write_config_copy

    cfg = _load(args)
    data = sample_data(cfg)
    if args.out:
        write_config_copy(args.out, cfg)
        write_dataset(data, Path(args.out) / "dataset.txt")
    else:
        write_dataset(data, "/dev/stdout")
    return EXIT_OK


def cmd_pipeline(args):
    if args.sweep:
        return _sweep(args)
    if not args.out:
        raise ConfigError("--out is required")
    return _run_one(args.command, _load(args), args.out)


def cmd_gradcheck(args):
    from .gradcheck import format_table, run_gradcheck

    rows = run_gradcheck(_load(args, args.config or "toy"))
    print(format_table(rows))
    return EXIT_OK if all(r.passed for r in rows) else EXIT_NUMERICAL


def cmd_curves(args):
    from .pipelines import curves_csv, run_pipeline

    cfg = _load(args)
    text = curves_csv(run_pipeline(cfg).curves)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "curves.csv").write_text(text, encoding="ascii")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_recipes(args):
    for name in recipe_names():
        print(name)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file, or the name of a shipped recipe")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override [experiment] seed")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="invquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sample", parents=[common], help="sample a dataset from the true potential")
    p.set_defaults(fn=cmd_sample)
    for name, text in (("reconstruct", "quantum single-particle reconstruction"),
                       ("classical", "classical-limit reconstruction"),
                       ("hf", "inverse Hartree-Fock reconstruction")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", help="dataset file (overrides [experiment] data_file)")
        p.add_argument("--sweep", help="file listing one config path per line; runs them in parallel")
        p.set_defaults(fn=cmd_pipeline)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference oracle table")
    p.set_defaults(fn=cmd_gradcheck)
    p = sub.add_parser("curves", parents=[common], help="plot-ready CSV of one reconstruction")
    p.add_argument("--data", help="dataset file (overrides [experiment] data_file)")
    p.set_defaults(fn=cmd_curves)
    p = sub.add_parser("recipes", help="list shipped recipes")
    p.set_defaults(fn=cmd_recipes, verbose=False, seed=None)
    return parser


def _logging(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    _logging(args.verbose)
    needs_config = args.command not in ("recipes", "gradcheck") and not getattr(args, "sweep", None)
    if needs_config and not args.config:
        log.error("--config is required")
        return EXIT_CONFIG
    return _guarded(args.fn, args)


if __name__ == "__main__":
    sys.exit(main())
