"""Command-line entry point.

Flags only select the subcommand and the config path; everything about
an experiment lives in its JSON config.  Exit status 0 means success
(or, for comm-audit and grad-check, that all checks matched).
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, DataError, TrainingAborted
from .gradcheck import TOLERANCE, dense_suite, moe_suite
from .runner import comm_audit, partition_report, run_config


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedmoe",
        description="Deterministic federated mixture-of-experts simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write its artifacts")
    p.add_argument("config", help="path to the JSON experiment config")

    p = sub.add_parser("comm-audit", help="compare metered traffic to the closed forms")
    p.add_argument("config")

    p = sub.add_parser("partition-report", help="emit client x class counts and skew")
    p.add_argument("config")

    p = sub.add_parser("grad-check", help="run the finite-difference gradient suites")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, TrainingAborted) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        cfg = load_config(args.config)
        outdir = run_config(cfg)
        print(f"run complete; artifacts in {outdir}")
        return 0

    if args.command == "comm-audit":
        cfg = load_config(args.config)
        rows, ok = comm_audit(cfg)
        print(f"{'mode':<14} {'round':>5} {'channel':<15} {'metered':>12} {'expected':>12}  verdict")
        for r in rows:
            print(
                f"{r.mode:<14} {r.round:>5} {r.channel:<15} {r.metered:>12} "
                f"{r.expected:>12}  {'match' if r.match else 'MISMATCH'}"
            )
        print(f"comm-audit: {'all rounds match' if ok else 'MISMATCH detected'}")
        return 0 if ok else 1

    if args.command == "partition-report":
        cfg = load_config(args.config)
        path, tv = partition_report(cfg)
        print(f"partition counts written to {path}")
        print(f"mean pairwise total-variation distance: {tv:.4f}")
        return 0

    # grad-check
    worst_dense = dense_suite(cases=args.cases, seed=args.seed)
    print(f"dense backward vs finite differences: worst relative error {worst_dense:.3e}")
    worst_moe = moe_suite(cases=args.cases, seed=args.seed)
    print(f"MoE train step vs finite differences: worst relative error {worst_moe:.3e}")
    ok = worst_dense < TOLERANCE and worst_moe < TOLERANCE
    print(f"grad-check: {'PASS' if ok else 'FAIL'} (tolerance {TOLERANCE})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
