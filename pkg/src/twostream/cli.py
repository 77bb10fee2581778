"""Command line entry point.

    twostream gen-data --out runs/a
    twostream compute-flow --out runs/a --jobs 2
    twostream train --out runs/a --strategy temporal_only
    twostream eval --out runs/a --strategy temporal_only
    twostream run-all --out runs/a
    twostream render-confusion --out runs/a --strategy mid --cell 48

Exit codes: 0 success, 1 bad usage or configuration, 2 missing or malformed
data, 3 solver or training divergence.
"""

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import STRATEGIES, RunConfig, load_run_config
from .errors import (ConfigError, ConvergenceError, TwoStreamError,
                     UsageError)
from .evaluation import (format_comparison_table, read_confusion_csv,
                         render_confusion_pgm)
from .pipeline import (RunPaths, run_all, run_compute_flow, run_eval,
                       run_gen_data, run_train)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; this CLI reserves 2 for data."""

    def error(self, message):
        raise UsageError(message)


def _add_common(parser, strategy: bool = True, jobs: bool = False) -> None:
    parser.add_argument("--out", required=True, metavar="DIR",
                        help="run output directory")
    parser.add_argument("--config", metavar="FILE",
                        help="config file of section.key = value lines")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="master seed (overrides run.seed)")
    if strategy:
        parser.add_argument("--strategy", choices=STRATEGIES,
                            help="fusion strategy (overrides run.strategy)")
    if jobs:
        parser.add_argument("--jobs", type=int, metavar="N",
                            help="worker threads for flow (overrides run.jobs)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="twostream",
                     description="Two-stream action recognition on synthetic "
                                 "moving-shape clips.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    _add_common(p, strategy=False)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("compute-flow", help="estimate flow for every clip")
    _add_common(p, strategy=False, jobs=True)
    p.set_defaults(func=_cmd_compute_flow)

    p = sub.add_parser("train", help="train the streams a strategy needs")
    _add_common(p, jobs=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a strategy on the test split")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run-all", help="run and compare all five strategies")
    _add_common(p, strategy=False, jobs=True)
    p.set_defaults(func=_cmd_run_all)

    p = sub.add_parser("render-confusion",
                       help="re-render a confusion image from its CSV")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--cell", type=int, default=32, metavar="PX",
                   help="cell size in pixels (default 32)")
    p.set_defaults(func=_cmd_render_confusion)
    return parser


def _config_from(args) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None),
                 "strategy": getattr(args, "strategy", None),
                 "jobs": getattr(args, "jobs", None)}
    try:
        return load_run_config(args.out, config_path=args.config, **overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _cmd_gen_data(args) -> int:
    config = _config_from(args)
    manifest_path = run_gen_data(config, log=print)
    print(f"dataset manifest: {manifest_path}")
    return 0


def _cmd_compute_flow(args) -> int:
    config = _config_from(args)
    flow_dir = run_compute_flow(config, log=print)
    count = len(list(flow_dir.glob("*.flow")))
    print(f"{count} flow stacks in {flow_dir}")
    return 0


def _cmd_train(args) -> int:
    config = _config_from(args)
    produced = run_train(config, log=print)
    for path in produced:
        print(f"model: {path}")
    return 0


def _cmd_eval(args) -> int:
    config = _config_from(args)
    result = run_eval(config, log=print)
    print(format_comparison_table([result]), end="")
    print(f"report: {RunPaths(config.out_dir).report_path(config.strategy)}")
    return 0


def _cmd_run_all(args) -> int:
    config = _config_from(args)
    reports = run_all(config, log=print)
    print(format_comparison_table(reports), end="")
    print(f"reports: {RunPaths(config.out_dir).reports_dir}")
    return 0


def _cmd_render_confusion(args) -> int:
    paths = RunPaths(Path(args.out))
    matrix = read_confusion_csv(paths.confusion_csv_path(args.strategy))
    out_path = paths.confusion_pgm_path(args.strategy)
    render_confusion_pgm(matrix, out_path, cell=args.cell)
    print(f"confusion image: {out_path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return 3
    except TwoStreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
