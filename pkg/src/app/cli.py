"""``shufflescan`` command line: compile, scan, bench, inspect, difftest, sweep, serve."""
import argparse
import sys
from typing import List, Optional, Sequence

from pydantic import ValidationError

from src.app.commands import (
    COMMANDS,
    EXIT_COMPILE,
    EXIT_IO,
    EXIT_USAGE,
    CliConfig,
    OutputFormat,
)
from src.engine.database import DEFAULT_BATCH_LENGTH
from src.engine.scanner import Engine
from src.errors import CapacityError, DatabaseError, PatternSetError
from src.region.detector import (
    DEFAULT_LEAK_DEPTH,
    DEFAULT_LEAK_THRESHOLD,
    DEFAULT_SIGMA,
    RegionMode,
)
from src.utils.log import configure_logging
from src.utils.workload import WorkloadKind


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; 2 is reserved for compile errors here."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv(kind):
    def parse(text: str) -> List:
        try:
            return [kind(item) for item in text.split(",") if item.strip()]
        except ValueError as err:
            raise argparse.ArgumentTypeError(str(err))
    return parse


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma", type=int, default=DEFAULT_SIGMA, help="stickiness threshold")
    parser.add_argument("--lambda", dest="leak_threshold", type=float, default=DEFAULT_LEAK_THRESHOLD,
                        help="leakiness threshold")
    parser.add_argument("--leak-depth", type=int, default=DEFAULT_LEAK_DEPTH, help="leakiness walk depth")
    parser.add_argument("--batch", dest="batch_length", type=int, default=DEFAULT_BATCH_LENGTH,
                        help="bytes per batch")
    parser.add_argument("--region-mode", choices=[m.value for m in RegionMode], default=RegionMode.HYPER.value)
    parser.add_argument("--seed", type=int, default=0)


def _add_source_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--db", help="compiled database (.hfxd)")
    source.add_argument("--rules", help="rule file, compiled on the fly")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shufflescan", description="Multi-pattern byte scanner with batched hyper-region transitions")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default) or ERROR")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    compile_cmd = sub.add_parser("compile", help="compile a rule file into a database")
    compile_cmd.add_argument("--rules", required=True)
    compile_cmd.add_argument("--out", help="output path (default: rules path with .hfxd)")
    compile_cmd.add_argument("--format", choices=[f.value for f in OutputFormat], default="jsonl")
    _add_detector_flags(compile_cmd)

    scan = sub.add_parser("scan", help="scan input files and print match events")
    _add_source_flags(scan)
    scan.add_argument("--input", dest="inputs", action="append", required=True)
    scan.add_argument("--engine", choices=[e.value for e in Engine], default=Engine.HYBRID.value)
    scan.add_argument("--format", choices=[f.value for f in OutputFormat], default="jsonl")
    scan.add_argument("--no-gutter", action="store_true", help=argparse.SUPPRESS)
    _add_detector_flags(scan)

    bench = sub.add_parser("bench", help="time the engines")
    _add_source_flags(bench)
    bench.add_argument("--input", dest="inputs", action="append", default=[])
    bench.add_argument("--engine", dest="engines", action="append", choices=[e.value for e in Engine])
    bench.add_argument("--repeat", type=int, default=5)
    bench.add_argument("--workload", choices=[w.value for w in WorkloadKind], default=WorkloadKind.REGION.value)
    bench.add_argument("--size", type=int, default=1 << 20, help="synthetic input size in bytes")
    bench.add_argument("--format", choices=[f.value for f in OutputFormat], default="jsonl")
    _add_detector_flags(bench)

    inspect = sub.add_parser("inspect", help="report SCCs and the region decision")
    _add_source_flags(inspect)
    inspect.add_argument("--dot", help="also write a Graphviz file")
    inspect.add_argument("--format", choices=[f.value for f in OutputFormat], default="text")
    _add_detector_flags(inspect)

    difftest = sub.add_parser("difftest", help="compare hybrid and scalar engines on random inputs")
    _add_source_flags(difftest)
    difftest.add_argument("--cases", type=int, default=1000)
    difftest.add_argument("--format", choices=[f.value for f in OutputFormat], default="jsonl")
    difftest.add_argument("--no-gutter", action="store_true", help=argparse.SUPPRESS)
    _add_detector_flags(difftest)

    sweep = sub.add_parser("sweep", help="throughput over a sigma/lambda/batch grid")
    sweep.add_argument("--rules", required=True)
    sweep.add_argument("--input", dest="inputs", action="append", default=[])
    sweep.add_argument("--sigmas", dest="sigma_grid", type=_csv(int), default=[])
    sweep.add_argument("--lambdas", dest="lambda_grid", type=_csv(float), default=[])
    sweep.add_argument("--batches", dest="batch_grid", type=_csv(int), default=[])
    sweep.add_argument("--repeat", type=int, default=3)
    sweep.add_argument("--workload", choices=[w.value for w in WorkloadKind], default=WorkloadKind.REGION.value)
    sweep.add_argument("--size", type=int, default=1 << 20)
    sweep.add_argument("--format", choices=[f.value for f in OutputFormat], default="jsonl")
    _add_detector_flags(sweep)

    serve = sub.add_parser("serve", help="run the HTTP scan service")
    serve.add_argument("--db", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def config_from_args(args: argparse.Namespace) -> CliConfig:
    values = {key: value for key, value in vars(args).items() if value is not None and key != "log_level"}
    if "engine" in values:
        values["engines"] = [values.pop("engine")]
    if not values.get("engines"):
        values.pop("engines", None)
        if args.command == "bench":
            values["engines"] = [Engine.HYBRID.value, Engine.SCALAR.value]
    return CliConfig(**values)


def _report_pattern_errors(err: PatternSetError) -> None:
    if not err.errors:
        print(f"error: {err}", file=sys.stderr)
        return
    for index, pattern_error in err.errors:
        line = err.lines.get(index)
        where = f"line {line}" if line is not None else f"pattern {index}"
        print(f"error: {where}: {pattern_error}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg, sys.stdout)
    except (ValidationError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except PatternSetError as err:
        _report_pattern_errors(err)
        return EXIT_COMPILE
    except CapacityError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_COMPILE
    except (OSError, DatabaseError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
