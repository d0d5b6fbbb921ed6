"""Command line entry point.

    mgsim run <scenario> [--seed N] [--backend md|mte|plain] [--domains N] [--report out.txt] [--csv out.csv]
    mgsim bench <suite> [--csv out.csv]
    mgsim oracle-check <scenario> [--seed N]
    mgsim corpus

Exit codes: 0 all expectations met, 1 expectation failure, 2 parse/config error.
A scenario argument that is not an existing file is looked up in the
bundled corpus by name (``heartbleed`` or ``heartbleed.mg``).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import corpus
from .bench import SUITES, rows_to_csv, run_bench
from .domains import EventCounters
from .errors import ParseError
from .memory import Backing
from .runner import RunReport, run_scenario
from .scenario import parse_scenario

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _read_scenario(name: str) -> str:
    p = Path(name)
    if p.is_file():
        return p.read_text()
    key = name if name.endswith(".mg") else name + ".mg"
    if key in corpus.ALL:
        return corpus.load(key)
    raise ParseError(f"no such scenario file {name!r}")


def _counters_csv(report: RunReport) -> str:
    c = EventCounters(**report.counters)
    return EventCounters.csv_header() + "\n" + c.csv_row() + "\n"


def _cmd_run(args) -> int:
    sc = parse_scenario(_read_scenario(args.scenario))
    report = run_scenario(sc, seed=args.seed, backend=args.backend, domains=args.domains)
    text = report.serialize()
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    if args.csv:
        Path(args.csv).write_text(_counters_csv(report))
    return EXIT_OK if report.ok else EXIT_FAILED


def _cmd_bench(args) -> int:
    text = rows_to_csv(run_bench(args.suite))
    if args.csv:
        Path(args.csv).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    sc = parse_scenario(_read_scenario(args.scenario))
    report = run_scenario(sc, seed=args.seed, strict=False, oracle=True)
    for d in report.divergences:
        print(f"divergence {d}")
    print(f"oracle checks={report.oracle_checks} divergences={len(report.divergences)}")
    return EXIT_OK if not report.divergences else EXIT_FAILED


def _cmd_corpus(args) -> int:
    for name, what in corpus.ALL.items():
        print(f"{name:24} {what}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgsim", description="Guard-based intra-process isolation simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario and print its report")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int)
    run.add_argument("--backend", choices=[b.value for b in Backing])
    run.add_argument("--domains", type=int)
    run.add_argument("--report", help="also write the report here")
    run.add_argument("--csv", help="write the event counters as CSV here")
    run.set_defaults(fn=_cmd_run)

    bench = sub.add_parser("bench", help="run an event-count benchmark suite")
    bench.add_argument("suite", help="one of: " + ", ".join(SUITES))
    bench.add_argument("--csv", help="write rows here instead of stdout")
    bench.set_defaults(fn=_cmd_bench)

    oc = sub.add_parser("oracle-check", help="compare every access against the independent oracle")
    oc.add_argument("scenario")
    oc.add_argument("--seed", type=int)
    oc.set_defaults(fn=_cmd_oracle_check)

    cp = sub.add_parser("corpus", help="list bundled scenarios")
    cp.set_defaults(fn=_cmd_corpus)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except ParseError as exc:
        print(f"mgsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"mgsim: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
