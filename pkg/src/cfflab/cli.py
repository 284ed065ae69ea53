"""``cfflab`` command line: run, audit, reproduce-paper-stats, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN_FAILURE = 3
EXIT_REPRODUCTION = 4
EXIT_INPUT = 5


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfflab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every (cell, seed) pair in a config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides config and $CFFLAB_OUT)")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--seed-list", type=_seed_list, help="comma-separated seeds, overriding the config")

    aud = sub.add_parser("audit", help="variance audit of a manifest CSV")
    aud.add_argument("manifest")
    aud.add_argument("--group-by", choices=("margin", "stability", "condition"), default="margin")
    aud.add_argument("--out", help="write the JSON report here")
    aud.add_argument("--resamples", type=int, default=10_000)
    aud.add_argument("--seed", type=int, default=0, help="bootstrap seed")

    rep = sub.add_parser("reproduce-paper-stats", help="recompute the reference statistics from the bundled per-seed tables")
    rep.add_argument("--seed", type=int, default=0, help="bootstrap seed")

    fig = sub.add_parser("report", help="CSV and SVG figures from a run directory")
    fig.add_argument("run_dir")
    fig.add_argument("--group-by", choices=("margin", "stability", "condition"), default="margin")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        try:
            cfg = experiment.load_config(args.config)
        except experiment.ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if args.jobs < 1:
            print("config error: --jobs must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        out_dir, rows = experiment.cmd_run(cfg, args.out, args.jobs, args.seed_list)
        failed = [r for r in rows if r["status"] != "ok"]
        for r in rows:
            acc = "NA" if r["test_accuracy"] is None else f"{r['test_accuracy']:.2f}"
            print(f"{r['condition']:<20} seed {r['seed']:<4} {acc:>7}  {r['status']}")
        print(f"manifest: {out_dir / 'manifest.csv'}")
        return EXIT_RUN_FAILURE if failed else EXIT_OK

    if args.command == "audit":
        try:
            report = experiment.cmd_audit(args.manifest, args.group_by, args.resamples, args.seed)
        except (OSError, ValueError) as exc:
            print(f"audit error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(report.to_text())
        if args.out:
            Path(args.out).write_text(report.to_json())
        return EXIT_OK

    if args.command == "reproduce-paper-stats":
        checks, table = experiment.cmd_reproduce_paper_stats(args.seed)
        print(table)
        return EXIT_OK if all(c.passed for c in checks) else EXIT_REPRODUCTION

    if args.command == "report":
        try:
            written = experiment.cmd_report(args.run_dir, args.group_by)
        except (OSError, ValueError) as exc:
            print(f"report error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        for path in written:
            print(path)
        return EXIT_OK
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
