"""Command-line entry point: validate, solve, test, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_manifest
from .experiments import ExperimentError, run_manifest


def _add_run_flags(p):
    p.add_argument("--manifest", required=True, help="experiment manifest (YAML)")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
    p.add_argument("--seed-base", type=int, default=None, help="override the ensemble seed base")
    p.add_argument("--profile", choices=("quick", "full"), default="full")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spmelab",
                                     description="stochastic porous-medium SPDE laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="run the assumption validators on a manifest")
    v.add_argument("--manifest", required=True)

    s = sub.add_parser("solve", help="run a solve-kind manifest and export trajectories")
    _add_run_flags(s)

    t = sub.add_parser("test", help="run a verification experiment manifest")
    _add_run_flags(t)

    r = sub.add_parser("report", help="summarize verdicts.jsonl from an output directory")
    r.add_argument("--out", required=True)
    return parser


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    reports = manifest.validate()
    for rep in reports:
        print(rep)
    ok = all(r.passed for r in reports)
    print("all validators passed" if ok else "VALIDATION FAILED")
    return 0 if ok else 2


def cmd_run(args, expect_solve: bool) -> int:
    manifest = load_manifest(args.manifest)
    if expect_solve and manifest.kind != "solve":
        print(f"error: 'solve' expects a solve-kind manifest, got {manifest.kind!r}", file=sys.stderr)
        return 2
    if not expect_solve and manifest.kind == "solve":
        print("error: 'test' expects a verification manifest; use 'solve' instead", file=sys.stderr)
        return 2
    status = run_manifest(manifest, args.out, threads=args.threads,
                          seed_base=args.seed_base, profile=args.profile)
    print(f"artifacts written to {args.out}")
    summary = Path(args.out) / "verdicts.jsonl"
    if summary.exists():
        for line in summary.read_text().splitlines():
            rec = json.loads(line)
            tag = "PASS" if rec["passed"] else "FAIL"
            print(f"[{tag}] {rec['name']}: statistic={rec['statistic']:.6g} "
                  f"tolerance={rec['tolerance']:.6g} margin={rec['margin']:.6g}")
    return status


def cmd_report(args) -> int:
    path = Path(args.out) / "verdicts.jsonl"
    if not path.exists():
        print(f"error: {path} not found", file=sys.stderr)
        return 2
    failures = 0
    print(f"{'verdict':40s} {'statistic':>14s} {'tolerance':>14s} {'margin':>14s}  result")
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        tag = "PASS" if rec["passed"] else "FAIL"
        failures += 0 if rec["passed"] else 1
        print(f"{rec['name'][:40]:40s} {rec['statistic']:14.6g} {rec['tolerance']:14.6g} "
              f"{rec['margin']:14.6g}  {tag}")
    print(f"{failures} failing verdict(s)" if failures else "all verdicts pass")
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "solve":
            return cmd_run(args, expect_solve=True)
        if args.command == "test":
            return cmd_run(args, expect_solve=False)
        if args.command == "report":
            return cmd_report(args)
    except (ConfigError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
