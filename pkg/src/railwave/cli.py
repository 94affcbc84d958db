"""``railwave generate|extract|train|eval`` command-line entry point.

Exit codes: 0 success, 1 user or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from railwave import config as config_mod
from railwave import pipeline
from railwave.errors import (
    BadSpec,
    ConfigError,
    MissingFeatures,
    MissingFile,
    MissingManifest,
    RailwaveError,
    VersionMismatch,
)

EXIT_OK, EXIT_USER, EXIT_RUNTIME = 0, 1, 2
_USER_ERRORS = (ConfigError, MissingManifest, MissingFeatures, MissingFile, BadSpec, VersionMismatch)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration file (section.key = value)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key; repeatable")
    common.add_argument("--seed", type=int, help="sets both dataset.seed and model.seed")
    common.add_argument("--dry-run", action="store_true", help="print the plan and write nothing")

    parser = argparse.ArgumentParser(prog="railwave", description="Wavelet + ResNet vibration fault diagnosis")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the synthetic dataset")
    sub.add_parser("extract", parents=[common], help="compute scalogram feature images")
    sub.add_parser("train", parents=[common], help="train the network and write a checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one split")
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--split", default="test", choices=["train", "val", "test"])
    ev.add_argument("--out", type=Path, help="report directory (default OUTPUT/eval_SPLIT)")
    ev.add_argument("--predictions-file", type=Path,
                    help="CSV path,predicted_class_id; bypasses the model")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in args.overrides:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    if args.seed is not None:
        out["dataset.seed"] = str(args.seed)
        out["model.seed"] = str(args.seed)
    return out


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config, _overrides(args))
        if args.command == "generate":
            pipeline.cmd_generate(cfg, args.dry_run)
        elif args.command == "extract":
            pipeline.cmd_extract(cfg, args.dry_run)
        elif args.command == "train":
            pipeline.cmd_train(cfg, args.dry_run)
        else:
            pipeline.cmd_eval(cfg, args.checkpoint, args.split, args.out, args.predictions_file, args.dry_run)
    except _USER_ERRORS as exc:
        print(f"railwave: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (RailwaveError, OSError) as exc:
        print(f"railwave: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
