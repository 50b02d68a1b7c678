"""Command-line front end.

    casecollab validate [--config FILE]
    casecollab run      [--config FILE] [--seed N] [--out DIR] [--trace]
    casecollab compare  [--config FILE] [--seed N] [--out DIR] [--runs N]
    casecollab sweep    [--config FILE] [--seed N] [--out DIR] [--runs N] --param NAME --values A,B,C

Exit status: 0 ok, 1 config error, 2 usage error, 3 simulation aborted.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from .config import (
    ScenarioConfig,
    default_config_path,
    format_config,
    load_config,
    parse_duration,
    parse_rate,
)
from .errors import CaseSimError, ConfigError, UnknownParameter
from .scenario import compare_strategies, run_scenario, sensitivity_sweep


def write_outputs(out: Path, files: dict) -> None:
    """Stage every file as a temp file in ``out``, then rename them all into place.

    Nothing is renamed unless every file was written completely.
    """
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casecollab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="scenario file (default: the shipped default scenario)")
    common.add_argument("--seed", type=_u64, default=None, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")

    sub.add_parser("validate", parents=[common], help="print the normalized config and digest")
    run = sub.add_parser("run", parents=[common], help="run one scenario")
    run.add_argument("--trace", action="store_true", help="also write trace.tsv and audit.jsonl")
    cmp_ = sub.add_parser("compare", parents=[common], help="paired VcsModel vs Baseline runs")
    cmp_.add_argument("--runs", type=_positive, default=30)
    cmp_.add_argument("--workers", type=_positive, default=1)
    sweep = sub.add_parser("sweep", parents=[common], help="sensitivity sweep of one parameter")
    sweep.add_argument("--runs", type=_positive, default=1)
    sweep.add_argument("--workers", type=_positive, default=1)
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    return parser


def parse_values(param: str, text: str) -> list[float]:
    """Sweep values: bare numbers are base units (seconds, cases/s); unit strings are converted."""
    values = []
    for i, item in enumerate(v.strip() for v in text.split(",")):
        if not item:
            continue
        try:
            values.append(float(item))
        except ValueError:
            key = f"--values[{i}]"
            values.append(parse_rate(item, key) if param == "arrival_rate"
                          else parse_duration(item, key))
    return values


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config or default_config_path())
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    out: Path = args.out
    try:
        if args.command == "validate":
            sys.stdout.write(format_config(cfg))
        elif args.command == "run":
            report = run_scenario(cfg, trace=args.trace)
            files = {"report.txt": report.to_text(), "samples.csv": report.samples_csv()}
            if args.trace:
                files["trace.tsv"] = report.trace_tsv()
                files["audit.jsonl"] = report.audit_jsonl()
            write_outputs(out, files)
            closed = report.throughput["closed"]
            print(f"{report.throughput['enrolled']} cases enrolled, {closed} closed, "
                  f"{len(report.samples)} delay samples -> {out}")
        elif args.command == "compare":
            table = compare_strategies(cfg, args.runs, workers=args.workers)
            write_outputs(out, {"comparison.csv": table.to_csv()})
            print(f"compared {args.runs} paired runs -> {out / 'comparison.csv'}")
        elif args.command == "sweep":
            try:
                values = parse_values(args.param, args.values)
            except ConfigError as exc:
                print(f"usage error: {exc}", file=sys.stderr)
                return 2
            table = sensitivity_sweep(cfg, args.param, values, args.runs,
                                      workers=args.workers)
            write_outputs(out, {"sweep.csv": table.to_csv()})
            print(f"swept {args.param} over {len(values)} values -> {out / 'sweep.csv'}")
    except UnknownParameter as exc:
        print(f"usage error: unknown parameter {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CaseSimError as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
