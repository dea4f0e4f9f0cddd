"""Command-line entry point: ``crowd-mfg run`` and ``crowd-mfg check-gradient``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .experiments import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, gradient_check_rows, run_experiment
from .output import write_table_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowd-mfg", description="Mean-field evacuation and Hughes crowd models in 1D.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="path to the configuration file")
    run.add_argument("--output-dir", default=None, help="override run.output_dir")
    run.add_argument("--seed", type=int, default=None, help="override run.seed")
    run.add_argument("--threads", type=int, default=1, help="parallel members in sweep experiments")

    grad = sub.add_parser("check-gradient", help="compare the adjoint gradient with finite differences")
    grad.add_argument("config", help="path to the configuration file")
    grad.add_argument("--seed", type=int, default=0, help="seed of the random test direction")
    grad.add_argument("--csv", default=None, help="also write the table to this file")
    grad.add_argument("--tolerance", type=float, default=1e-3, help="required relative error at eps=1e-4")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"crowd-mfg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        if args.threads < 1:
            print("crowd-mfg: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        result = run_experiment(cfg, args.output_dir, args.seed, args.threads)
        for failure in result.failures:
            print(f"crowd-mfg: {failure['module']}: {failure['message']}", file=sys.stderr)
        print(f"{cfg.experiment}: status {result.status}, {len(result.files)} files in {result.output_dir}")
        return result.status

    try:
        rows = gradient_check_rows(cfg, args.seed)
    except RuntimeError as exc:
        print(f"crowd-mfg: gradient check failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{'eps':>8} {'finite diff':>18} {'adjoint':>18} {'rel. error':>10}")
    for r in rows:
        print(f"{r.eps:8.0e} {r.finite_difference:18.10e} {r.adjoint:18.10e} {r.relative_error:10.2e}")
    if args.csv:
        write_table_csv(("eps", "finite_difference", "adjoint", "relative_error"), ((r.eps, r.finite_difference, r.adjoint, r.relative_error) for r in rows), args.csv)
    at = [r for r in rows if abs(r.eps - 1e-4) < 1e-12]
    ok = bool(at) and at[0].relative_error < args.tolerance
    return EXIT_OK if ok else EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
