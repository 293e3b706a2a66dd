"""Command-line entry point: ``jtsched run | summarize | validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench

log = logging.getLogger("jtsched")


def _algorithms(text: str) -> tuple:
    algs = tuple(a.strip() for a in text.split(",") if a.strip())
    if not algs:
        raise argparse.ArgumentTypeError("need at least one algorithm")
    return algs


def _print_rows(rows, out=None) -> None:
    out = out or sys.stdout
    out.write(f"{'algorithm':<9} {'value':>8} {'trials':>6} {'failed':>6} {'mean':>10} {'std':>9} "
              f"{'|S|':>6} {'runtime[s]':>11}\n")
    for r in sorted(rows, key=lambda r: (r.algorithm, r.value)):
        out.write(f"{r.algorithm:<9} {r.value:>8g} {r.trials:>6d} {r.failed:>6d} {r.mean_sum_rate:>10.4f} "
                  f"{r.std_sum_rate:>9.4f} {r.mean_scheduled:>6.2f} {r.mean_runtime:>11.4f}\n")


def cmd_run(args) -> int:
    spec = bench.ExperimentSpec.load(args.config)
    spec = spec.with_overrides(seed=args.seed, trials=args.trials, output=args.out,
                               algorithms=args.algorithms, workers=args.workers)
    out = spec.output or str(Path(args.config).with_suffix(""))
    log.info("running %s sweep over %s with %s, %d trials each", spec.axis, list(spec.values),
             ",".join(spec.algorithms), spec.trials)
    records = bench.run_experiment(spec)
    rows = bench.summarize(records)
    paths = bench.emit(records, rows, out, spec)
    _print_rows(rows)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    failed = sum(not r.ok for r in records)
    if failed:
        log.warning("%d of %d algorithm runs failed", failed, len(records))
    return 0


def cmd_summarize(args) -> int:
    records = bench.read_records(args.csv)
    if not records:
        log.error("%s holds no records", args.csv)
        return 1
    rows = bench.summarize(records)
    _print_rows(rows)
    if args.out:
        bench.write_summary(None, rows, args.out)
    return 0


def cmd_validate(args) -> int:
    try:
        records = bench.read_records(args.csv)
    except (bench.RecordFormatError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    problems = bench.check_records(records)
    for p in problems:
        log.error("%s", p)
    if problems:
        return 1
    print(f"{args.csv}: {len(records)} records OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jtsched", description="Cooperative multipoint scheduling experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a YAML file")
    run.add_argument("config", help="experiment YAML file")
    run.add_argument("--seed", type=int, help="override the base seed")
    run.add_argument("--trials", type=int, help="override the number of trials per sweep value")
    run.add_argument("--out", help="output directory (default: config path without suffix)")
    run.add_argument("--algorithms", type=_algorithms, help="comma-separated subset of alg1,alg2,alg3")
    run.add_argument("--workers", type=int, help="worker processes")
    run.set_defaults(func=cmd_run)

    summ = sub.add_parser("summarize", help="summary statistics of a records CSV")
    summ.add_argument("csv")
    summ.add_argument("--out", help="also write the JSON summary here")
    summ.set_defaults(func=cmd_summarize)

    val = sub.add_parser("validate", help="check a records CSV for format and consistency")
    val.add_argument("csv")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
