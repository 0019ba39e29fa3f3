"""Command line entry point: ``ltfl run | sweep | validate``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import SCHEMES, load_config
from .simulation import run_scheme
from .sweep import load_sweep, run_sweep
from .validate import run_checks

log = logging.getLogger("ltfl")


def _common(p: argparse.ArgumentParser, need_config: bool = True) -> None:
    p.add_argument("--config", required=need_config, help="scenario YAML file")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed(s)")
    p.add_argument("--out", default=None, help="output directory for the CSV files")
    p.add_argument("--scheme", choices=SCHEMES, default=None, help="override the configured scheme")
    p.add_argument("--verbose", action="store_true", help="log progress and write controller_trace.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltfl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one scenario"))
    _common(sub.add_parser("sweep", help="run a scenario grid"))
    _common(sub.add_parser("validate", help="run the built-in invariant checks"), need_config=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "validate":
        return 0 if run_checks(0 if args.seed is None else args.seed, log=print) else 1

    if args.command == "run":
        config = load_config(args.config)
        seeds = config.scenario.seeds if args.seed is None else [args.seed]
        for seed in seeds:
            out = args.out
            if out is not None and len(seeds) > 1:
                out = f"{out}/seed{seed}"
            result = run_scheme(config, seed, args.scheme, out, args.verbose)
            s = result.summary
            print(f"{s['scheme']} seed={seed} rounds={s['rounds_run']} final_accuracy={s['final_accuracy']:.4f} "
                  f"rounds_to_target={s['rounds_to_target'] or '-'} total_delay={s['total_delay']:.1f}s "
                  f"total_energy={s['total_energy']:.1f}J")
            if result.error:
                print(f"error: {result.error}", file=sys.stderr)
                return 2
        return 0

    spec = load_sweep(args.config)
    if args.scheme is not None:
        spec.schemes = [args.scheme]
    seeds = None if args.seed is None else [args.seed]
    summary, _ = run_sweep(spec, args.out, seeds, args.verbose, log=log.info)
    print(f"{len(summary)} runs" + (f", results in {args.out}" if args.out else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
