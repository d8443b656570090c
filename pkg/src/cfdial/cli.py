"""Command-line front end: one subcommand per pipeline stage plus `all`.

Exit codes: 0 on success, 1 for anything wrong with the invocation or the
config file, 2 for failures while a stage is running.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .pipeline import STAGES, StageError, run_all, run_stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):         # usage problems are validation, not runtime
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfdial",
                     description="staged counterfactual dialogue-policy pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        cmd = sub.add_parser(name, help=f"run the {name} stage"
                             if name != "all" else "run every stage in order")
        cmd.add_argument("--config", default=None,
                         help="YAML experiment config (defaults used when omitted)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="master seed, overrides the config file")
        cmd.add_argument("--out", default="cfdial-run",
                         help="run directory (default ./cfdial-run)")
        cmd.add_argument("--stage-override", action="append", default=[],
                         metavar="KEY=VALUE",
                         help="dotted config override, e.g. bicogan.epochs=50")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, seed=args.seed,
                          overrides=args.stage_override)
    except ConfigError as exc:
        print(f"cfdial: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "all":
            run_all(cfg, args.out)
        else:
            run_stage(args.command, cfg, args.out)
    except StageError as exc:
        print(f"cfdial: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:          # noqa: BLE001 - the CLI boundary
        print(f"cfdial: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
