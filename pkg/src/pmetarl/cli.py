"""Command line entry point.

Subcommands ``train``, ``sweep-lambda``, ``verify-theory`` and ``baselines``
share the flags ``--config``, ``--out``, ``--seed`` and ``--jobs``.  Each
prints a delimited summary on stdout and writes files and figures into the
output directory.

Exit status: 0 success, 1 configuration error, 2 runtime failure,
3 a theory check failed (``verify-theory`` only).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

from .config import ExperimentConfig, load_config
from .errors import ConfigError
from .experiment import run_baselines, run_experiment, summarize, sweep_lambda, verify_theory

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_BOUND = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmetarl", description="Tabular personalised meta-RL experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (defaults apply to missing keys)")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, action="append",
                        help="run only this seed; repeat for several (overrides seeds)")
    common.add_argument("--jobs", type=int, default=1, help="seeds run in parallel")
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the configured algorithm")
    sw = sub.add_parser("sweep-lambda", parents=[common], help="pmeta over a grid of lambda values")
    sw.add_argument("--lambdas", type=lambda s: [float(x) for x in s.split(",")],
                    help="comma-separated grid (overrides lambdas)")
    vt = sub.add_parser("verify-theory", parents=[common], help="run pmeta and check the theory diagnostics")
    vt.add_argument("--trials", type=int, default=200, help="random pairs per contraction check")
    sub.add_parser("baselines", parents=[common], help="all trainers on the same family and seeds")
    return parser


def _resolve(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.seed:
        changes["seeds"] = tuple(args.seed)
    if getattr(args, "lambdas", None):
        changes["lambdas"] = tuple(args.lambdas)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return config.replace(**changes) if changes else config


def _row(*cells) -> str:
    return "\t".join("" if (isinstance(c, float) and math.isnan(c)) else (repr(c) if isinstance(c, float) else str(c))
                     for c in cells)


def _dispatch(args, config: ExperimentConfig) -> int:
    figures = not args.no_figures
    if args.command == "train":
        res = run_experiment(config, jobs=args.jobs, figures=figures)
        s = summarize(res)
        print(_row("algorithm", "lam", "pers_mean", "pers_std", "meta_mean", "meta_std", "n_seeds"))
        print(_row(config.algorithm, config.lam, s["pers_mean"], s["pers_std"], s["meta_mean"], s["meta_std"],
                   s["n_seeds"]))
        return EXIT_OK
    if args.command == "sweep-lambda":
        rows = sweep_lambda(config, jobs=args.jobs, figures=figures)
        print(_row("lam", "pers_mean", "pers_std", "meta_mean", "meta_std", "n_seeds", "best"))
        for r in rows:
            print(_row(r["lam"], r["pers_mean"], r["pers_std"], r["meta_mean"], r["meta_std"], r["n_seeds"], r["best"]))
        return EXIT_OK
    if args.command == "baselines":
        rows = run_baselines(config, jobs=args.jobs, figures=figures)
        print(_row("algorithm", "pers_mean", "pers_std", "meta_mean", "meta_std", "n_seeds"))
        for r in rows:
            print(_row(r["algorithm"], r["pers_mean"], r["pers_std"], r["meta_mean"], r["meta_std"], r["n_seeds"]))
        return EXIT_OK
    checks = verify_theory(config, jobs=args.jobs, n_trials=args.trials, figures=figures)
    print(_row("check", "seed", "value", "limit", "passed"))
    for c in checks:
        print(_row(c.name, c.seed, float(c.value), float(c.limit), int(c.passed)))
    failed = sum(not c.passed for c in checks)
    print(f"# {len(checks) - failed}/{len(checks)} checks passed", file=sys.stderr)
    return EXIT_BOUND if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _dispatch(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # reported as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
