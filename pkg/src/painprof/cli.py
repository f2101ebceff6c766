"""Command-line entry point: ``painprof <subcommand> [options]``.

Log verbosity comes from the ``PAINPROF_LOG_LEVEL`` environment variable
(DEBUG, INFO, WARNING, ...; default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from painprof import pipeline
from painprof.config import apply_overrides, load_config
from painprof.dataset.model import MODALITIES
from painprof.errors import PainProfError

EXIT_CODES = {
    "config": 2,
    "missing-artifact": 3,
    "ingest": 4,
    "input": 4,
    "range": 4,
    "registration": 4,
    "numerics": 5,
}

STAGES = {
    "synth": pipeline.run_synth,
    "extract": pipeline.run_extract,
    "profile": pipeline.run_profile,
    "train": pipeline.run_train,
    "evaluate": pipeline.run_evaluate,
    "pipeline": pipeline.run_pipeline,
}

HELP = {
    "synth": "generate a synthetic cohort with planted profiles",
    "extract": "compute estimation and profiling window features",
    "profile": "build descriptors and cluster subjects into profiles",
    "train": "train the joint and profile-specific networks",
    "evaluate": "write the results table and significance tests",
    "pipeline": "run every stage (synth only when no manifest is configured)",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: bundled defaults)")
    common.add_argument("--out-dir", default="painprof-run", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--c", type=int, help="number of profiles (clusters)")
    common.add_argument("--gamma", type=float, help="RBF kernel width for the similarity graph")
    common.add_argument("--modalities", choices=MODALITIES, help="features of the profile-specific model")
    common.add_argument("--baseline-run", help="earlier output directory to test against")

    parser = argparse.ArgumentParser(prog="painprof", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def _setup_logging():
    level = os.environ.get("PAINPROF_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, seed=args.seed, c=args.c, gamma=args.gamma,
                              modality=args.modalities, baseline_run=args.baseline_run)
        result = STAGES[args.command](cfg, args.out_dir)
    except PainProfError as exc:
        print(f"painprof {args.command}: {exc.category} error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    if args.command in ("evaluate", "pipeline"):
        print(result.to_text(), end="")
    elif args.command == "profile":
        model, _ = result
        print(f"{len(model.labels)} subjects in {model.c} cluster(s); "
              f"sizes {[int((model.labels == k).sum()) for k in range(1, model.c + 1)]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
