"""Command-line driver for the experiment pipeline.

Subcommands: train, attack, topo, classify-subgraphs, recover-adversaries,
neighbors, perturb-compare, diagram-distance. Every command takes a JSON
config file (--config) plus flag overrides. Exit codes: 0 success, 1
validation failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .errors import (
    ConfigurationError,
    ConsistencyError,
    FormatError,
    NumericError,
    UsageError,
    ValidationError,
)

_OVERRIDE_FLAGS = [
    # (flag, config field, type)
    ("--out", "out_dir", str),
    ("--data-source", "data_source", str),
    ("--train-images", "train_images", str),
    ("--train-labels", "train_labels", str),
    ("--test-images", "test_images", str),
    ("--test-labels", "test_labels", str),
    ("--train-size", "train_size", int),
    ("--test-size", "test_size", int),
    ("--per-class", "per_class_samples", int),
    ("--preset", "preset", str),
    ("--epochs", "epochs", int),
    ("--lr", "lr", float),
    ("--batch", "batch", int),
    ("--attack-preset", "attack_preset", str),
    ("--eps", "eps", float),
    ("--step", "step", float),
    ("--iters", "iters", int),
    ("--adversaries", "n_adversaries", int),
    ("--phi-threshold", "phi_threshold", float),
    ("--pool-edges", "pool_edges", str),
    ("--top-k", "top_k_diagram", int),
    ("--gamma", "gamma", str),
    ("--svm-c", "C", float),
    ("--q", "wasserstein_q", float),
    ("--seed", "seed", int),
]

_COMMANDS = {
    "train": experiments.run_train,
    "attack": experiments.run_attack,
    "topo": experiments.run_topo,
    "classify-subgraphs": experiments.run_classify_subgraphs,
    "recover-adversaries": experiments.run_recover_adversaries,
    "neighbors": experiments.run_neighbors,
    "perturb-compare": experiments.run_perturb_compare,
    "diagram-distance": experiments.run_diagram_distance,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acttopo",
        description="Persistent homology over neural-network activation graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0].lower().rstrip("."))
        p.add_argument("--config", help="JSON config file (RunConfig fields)")
        for flag, dest, typ in _OVERRIDE_FLAGS:
            p.add_argument(flag, dest=f"cfg_{dest}", type=typ, default=None)
        if name == "topo":
            p.add_argument("--inputs", type=int, default=10,
                           help="number of test inputs to process")
    return parser


def _config_from_args(args: argparse.Namespace) -> experiments.RunConfig:
    cfg = (experiments.RunConfig.from_file(args.config) if args.config
           else experiments.RunConfig())
    overrides = {}
    for _, dest, _ in _OVERRIDE_FLAGS:
        val = getattr(args, f"cfg_{dest}", None)
        if val is not None:
            overrides[dest] = val
    if "gamma" in overrides and overrides["gamma"] != "auto":
        overrides["gamma"] = float(overrides["gamma"])
    return cfg.replace(**overrides) if overrides else cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command == "topo":
            report = experiments.run_topo(cfg, n_inputs=args.inputs)
        else:
            report = _COMMANDS[args.command](cfg)
    except (UsageError, FormatError, ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ConsistencyError, NumericError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({k: v for k, v in report.items() if k != "config"},
                     indent=2, default=float))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
