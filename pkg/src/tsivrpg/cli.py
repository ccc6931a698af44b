"""Command line entry point: ``tsivrpg run <config> [--seed S] [--runs R] [--out DIR] [--algorithm A]``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.  The output
directory can also be forced with the ``TSIVRPG_OUT`` environment variable,
which takes precedence over both the config and ``--out``.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import ALGORITHMS, ConfigError, SlopeResult, execute, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("tsivrpg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsivrpg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment described by a YAML config")
    p.add_argument("config", help="path to the experiment config")
    p.add_argument("--seed", type=int, help="seed base (run k uses seed + k)")
    p.add_argument("--runs", type=int, help="number of independent runs")
    p.add_argument("--out", help="output directory")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_overrides(cfg, args):
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be nonnegative")
        cfg.seed_base = args.seed
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("--runs", "must be >= 1")
        cfg.num_runs = args.runs
    if args.out is not None:
        cfg.out_dir = args.out
    if args.algorithm is not None:
        if cfg.experiment == "slope" and args.algorithm != "tsivr_pg":
            raise ConfigError("--algorithm", "the slope study runs tsivr_pg only")
        cfg.algorithm = args.algorithm
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure mid-run maps to one exit code
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if isinstance(result, SlopeResult):
        print(f"slope {result.slope:.4f} over N={result.n_values}")
    print(f"wrote results to {cfg.output_dir()}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
