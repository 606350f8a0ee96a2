"""Command-line front end.

Exit codes: 0 success, 2 user/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from ..optimizers import DivergenceError
from . import commands
from .config import ConfigError, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgsharp",
        description="Multi-domain sharpness-aware optimization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, extra=()):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed list with one seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent runs")
        for args, kw in extra:
            p.add_argument(*args, **kw)
        return p

    add("run", "train with each configured optimizer and seed")
    add("perturb-trace", "compare total-gradient vs domain-wise perturbations")
    add("sharpness-table", "per-domain / total / unseen sharpness at a point",
        extra=[(("--checkpoint",), {"default": None,
                                    "help": "run_*.json with final_theta"}),
               (("--point",), {"default": None,
                               "help": "named point (r1/r2) or JSON vector"})])
    add("cost", "gradient-evaluation counts and wall-clock per iteration")
    add("landscape", "loss grid over a random or given plane")
    add("spectrum", "Hessian eigenvalue density at a point",
        extra=[(("--point",), {"default": None})])
    add("verify-theory", "run the bound, ordering and convergence checkers")
    return parser


def _parse_point(text):
    if text is None:
        return None
    if text in ("r1", "r2"):
        return text
    import json

    return json.loads(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seeds = [args.seed]
        out_dir = args.out or config.output_dir
        if args.command == "run":
            return commands.cmd_run(config, out_dir, threads=args.threads)
        if args.command == "perturb-trace":
            return commands.cmd_perturb_trace(config, out_dir)
        if args.command == "sharpness-table":
            return commands.cmd_sharpness_table(
                config, out_dir, checkpoint=args.checkpoint,
                point=_parse_point(args.point))
        if args.command == "cost":
            return commands.cmd_cost(config, out_dir)
        if args.command == "landscape":
            return commands.cmd_landscape(config, out_dir)
        if args.command == "spectrum":
            return commands.cmd_spectrum(config, out_dir,
                                         point=_parse_point(args.point))
        if args.command == "verify-theory":
            return commands.cmd_verify_theory(config, out_dir)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
