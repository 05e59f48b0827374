"""Command line interface: `hintdrive train` and `hintdrive eval`.

Values come from defaults, then an optional flat key-value config file
(--config), then explicit CLI flags (highest precedence). The summary of a
run is printed to stdout as JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import HINT_MODES, RunConfig, parse_config_file, run_eval, run_train


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--scenario", choices=["overtaking", "merging", "trilemma", "occluded_pedestrian"])
    parser.add_argument("--density", choices=["low", "medium", "high"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--hint-mode", choices=list(HINT_MODES), dest="hint_mode")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--corpus", help="knowledge corpus file (one fragment per line)")
    parser.add_argument("--checkpoint", help="checkpoint path (required for eval)")
    parser.add_argument("--goal-x", type=float, dest="goal_x")
    parser.add_argument(
        "--sync-test-mode",
        action="store_true",
        default=None,
        dest="sync_test_mode",
        help="deterministic inline hint scheduling (tick-based deadlines)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hintdrive")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a policy")
    _add_common(train)
    train.add_argument("--steps", type=int, help="total environment steps")

    ev = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    _add_common(ev)
    ev.add_argument("--episodes", type=int, help="evaluation episode count")
    return parser


_ARG_TO_CONFIG = {
    "scenario": "scenario",
    "density": "density",
    "seed": "seed",
    "hint_mode": "hint_mode",
    "out": "out",
    "corpus": "corpus",
    "checkpoint": "checkpoint",
    "goal_x": "goal_x",
    "sync_test_mode": "sync_test_mode",
    "steps": "steps",
    "episodes": "episodes",
}

_CONFIG_TO_FIELD = {
    "scenario": "scenario",
    "density": "density",
    "seed": "seed",
    "steps": "total_steps",
    "episodes": "episodes",
    "hint_mode": "hint_mode",
    "out": "output_dir",
    "checkpoint": "checkpoint",
    "corpus": "corpus",
    "sync_test_mode": "sync_test_mode",
    "goal_x": "goal_x",
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = parse_config_file(args.config) if args.config else {}
    for arg_name, key in _ARG_TO_CONFIG.items():
        cli_value = getattr(args, arg_name, None)
        if cli_value is not None:
            values[key] = cli_value
    fields = {_CONFIG_TO_FIELD[k]: v for k, v in values.items()}
    return RunConfig(mode=args.command, **fields)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        summary = run_train(cfg) if args.command == "train" else run_eval(cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
