"""Command line entry point: ``fedfnn run`` and ``fedfnn params``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import FedFNNError
from .harness import param_count, run_experiment

# CLI flag -> config key
_RUN_FLAGS = [
    ("--dataset", "dataset", str),
    ("--alpha", "alpha", float),
    ("--uncertainty", "uncertainty", float),
    ("--clients", "clients", int),
    ("--rules", "rules", int),
    ("--erl-iters", "erl_iters", int),
    ("--coop-rounds", "coop_rounds", int),
    ("--beta", "beta", float),
    ("--lr", "lr", float),
    ("--epochs", "epochs", int),
    ("--batch", "batch", int),
    ("--folds", "folds", int),
    ("--repeats", "repeats", int),
    ("--seed", "seed", int),
    ("--out", "out", str),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedfnn", description="Federated fuzzy neural network experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per fold")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a cross-validated FedFNN experiment")
    run.add_argument("--config", required=True, help="flat key = value config file")
    for flag, dest, typ in _RUN_FLAGS:
        run.add_argument(flag, dest=dest, type=typ, default=None)
    run.add_argument("--baseline", choices=["fedavg", "none"], default=None,
                     help="also run the FedAvg baseline on identical splits")

    params = sub.add_parser("params", help="parameter count of a rule bank")
    params.add_argument("--d", type=int, required=True, help="feature dimension")
    params.add_argument("--c", type=int, required=True, help="class count")
    params.add_argument("--k", type=int, required=True, help="rule count")
    return parser


def _report(metrics) -> None:
    for m in [metrics] + ([metrics.baseline] if metrics.baseline else []):
        s = m.summary()
        if s["mean_accuracy"] is None:
            print(f"{m.mode}: all {s['runs']} runs failed")
            continue
        print(f"{m.mode}: accuracy {s['mean_accuracy']:.4f} +/- {s['std_accuracy']:.4f} "
              f"over {s['runs'] - s['failed']} runs, mean final K {s['mean_final_K']:.1f}")
        if s["failed"]:
            print(f"{m.mode}: {s['failed']} runs diverged and were excluded")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "params":
            print(param_count(args.d, args.c, args.k))
            return 0
        overrides = {dest: getattr(args, dest) for _, dest, _ in _RUN_FLAGS}
        overrides["baseline"] = args.baseline
        metrics = run_experiment(args.config, overrides)
        _report(metrics)
        return 0
    except (FedFNNError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
