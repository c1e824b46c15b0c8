"""Command-line experiment runner (``srekit``)."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from ..errors import ConfigurationError, SREError
from .config import ConfigError, ExperimentConfig, parse_config, render_config
from .runner import EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME, EXIT_USAGE, RunResult, execute

__all__ = ["ConfigError", "ExperimentConfig", "RunResult", "execute", "main", "parse_config", "render_config"]

COMMANDS = {
    "simulate": "write a simulated trajectory",
    "lyapunov": "estimate E[log Lambda] for r = 1..r_max",
    "converge": "coupling and perturbed-filter gaps with rate fits",
    "verify": "run every check listed in the config",
    "lemma-probe": "pointwise and probabilistic lemma suites",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srekit", description="Stochastic recurrence equation experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "lemma-probe", help="experiment config file")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", help="override [output] directory")
        p.add_argument("--quiet", action="store_true", help="print nothing on success")
        p.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--emit-plot-data", action="store_true",
                       help="force CSV output; plotting is left to external tools")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            with open(args.config, encoding="utf-8") as fh:
                config = parse_config(fh.read())
        else:
            config = ExperimentConfig()
        if args.seed is not None:
            config = config.with_seed(args.seed)
        if args.out is not None:
            config = config.with_output(args.out)
        if args.emit_plot_data and not config.output.csv:
            config = replace(config, output=replace(config.output, csv=True))
        result = execute(config, args.command, args.jobs)
    except ConfigurationError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SREError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet:
        sys.stdout.write(result.report)
    return result.exit_code
