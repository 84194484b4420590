"""Command-line entry point: ``shiftlab <command> --config c.json --seed 0 --out dir --workers 4``.

Exit codes: 0 success, 2 model-assumption violation (no loss minimizer),
3 degenerate statistics (probit fit not identifiable), 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import multiprocessing
import sys

from .experiments import COMMANDS, ConfigError, load_config
from .logreg import NoMinimumError
from .robustness import DegenerateFitError

EXIT_OK, EXIT_ERROR, EXIT_ASSUMPTION, EXIT_DEGENERATE = 0, 1, 2, 3


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("need a positive integer")
    return v


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as a model-assumption violation
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shiftlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="JSON config file (unknown keys are rejected)")
        c.add_argument("--seed", type=_u64, help="base seed; overrides the config's seed")
        c.add_argument("--out", required=True, help="output directory")
        c.add_argument("--workers", type=_positive, default=1, help="worker processes (output does not depend on it)")
    return p


def run(command: str, raw_config: dict | None, seed, out: str, workers: int = 1) -> int:
    cfg = load_config(command, raw_config, seed)
    fn = COMMANDS[command]
    if workers > 1:
        ctx = multiprocessing.get_context("fork" if "fork" in multiprocessing.get_all_start_methods() else None)
        with ctx.Pool(workers) as pool:
            outcome = fn(cfg, map_fn=pool.map)
    else:
        outcome = fn(cfg, map_fn=map)
    outcome.write(out, cfg.run_id)
    return outcome.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = None
        if args.config:
            with open(args.config) as fh:
                raw = json.load(fh)
        return run(args.command, raw, args.seed, args.out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except NoMinimumError as exc:
        print(f"model assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except DegenerateFitError as exc:
        print(f"degenerate statistics: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
