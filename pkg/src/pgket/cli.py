"""Command-line entry point (``pgket`` / ``python -m pgket``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import checks
from .errors import ConfigError, DataError, DivergenceError, FormatError, PgketError, ValidationError
from .experiment import ExperimentConfig, evaluate_run, noise_compare, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_CHECK_FAILED = 5


def _experiment_config(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.data_dir is not None:
        overrides["data_dir"] = args.data_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.noise_space is not None:
        overrides["noise_space"] = args.noise_space
    return cfg.replace(**overrides) if overrides else cfg


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args):
    _print(run_experiment(_experiment_config(args), args.out))
    return EXIT_OK


def cmd_eval(args):
    _print(evaluate_run(args.run, args.split, args.backend, args.checkpoint))
    return EXIT_OK


def cmd_noise_compare(args):
    result = noise_compare(_experiment_config(args), args.out, args.sigma)
    _print(result["rows"])
    return EXIT_OK


def cmd_kernel_selftest(args):
    ok = True
    for name, passed, detail in checks.kernel_selftest(args.seed):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_oracle_check(args):
    modes = tuple(int(m) for m in args.modes.split(","))
    errors = checks.oracle_trials(modes, args.cutoff, args.trials, args.seed)
    worst = max(errors)
    passed = worst <= args.tol
    print(f"{'PASS' if passed else 'FAIL'}  {len(errors)} trials, modes {modes}, cutoff {args.cutoff}: "
          f"max |coherent - fock| = {worst:.3e} (tol {args.tol:.0e})")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(prog="pgket", description="Photonic Gaussian-kernel transformer toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--data-dir", help="override data_dir from the config")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--noise-space", choices=("pixel", "feature"),
                       help="add noise to pixels before PCA or to PCA features")

    p = sub.add_parser("train", help="run one experiment")
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved checkpoint on a data split")
    p.add_argument("--run", required=True, help="run directory holding config.json")
    p.add_argument("--checkpoint", help="checkpoint file (default: <run>/model.pgkt)")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--backend", choices=("exact", "shots"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-compare", help="paired clean and noisy runs")
    run_flags(p)
    p.add_argument("--sigma", type=float, default=0.4)
    p.set_defaults(func=cmd_noise_compare)

    p = sub.add_parser("kernel-selftest", help="check photonic-kernel invariants")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_kernel_selftest)

    p = sub.add_parser("oracle-check", help="compare coherent and Fock backends")
    p.add_argument("--modes", default="2,3", help="comma-separated mode counts")
    p.add_argument("--cutoff", type=int, default=18)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except PgketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
