"""Command line entry point: ``fedgp run | eval | list-scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import FedGPError
from .experiment import run_experiment
from .scenarios import describe, scenario_names

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedgp", description="Federated GP regression experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train FGPR (plus Separate on multi-fidelity scenarios)")
    ev = sub.add_parser("eval", help="run a baseline only")
    for q in (run, ev):
        q.add_argument("config", help="path to a YAML experiment config")
        q.add_argument("--out", help="output directory (overrides output_dir)")
        q.add_argument("--repeats", type=int, help="number of repeats (overrides repeats)")
        q.add_argument("--seed", type=int, help="master seed (overrides seed)")
    ev.add_argument("--baseline", required=True, choices=["separate"],
                    help="which baseline to run")

    sub.add_parser("list-scenarios", help="print the available scenario keys")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        for name in scenario_names():
            print(f"{name:18s} {describe(name)}")
        return EXIT_OK
    if args.repeats is not None and args.repeats < 1:
        print("fedgp: error: --repeats must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        print("fedgp: error: --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
    except FedGPError as exc:
        print(f"fedgp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    status = run_experiment(cfg, out_dir=args.out, repeats=args.repeats, seed=args.seed,
                            baseline_only=args.command == "eval")
    if status != EXIT_OK:
        print(f"fedgp: run failed; see {args.out or cfg.output_dir}/.failed", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
