"""warpdiff command line.

Every subcommand is a file-to-file transform; ``-`` means stdin/stdout, so
e.g. ``warpdiff simulate | warpdiff analyze | warpdiff report --top 10`` works.

Exit codes: 0 success, 1 success with per-case exclusions, 2 fatal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path

from . import __version__
from .corpus import compile_cases, load_manifest, manifest_digest, write_manifest
from .errors import WarpDiffError
from .executor import build_matrix, run_plan
from .model import (
    STAGES,
    TimingMatrix,
    matrix_from_csv,
    matrix_to_csv,
    read_exclusions,
    read_matrix_csv,
    write_exclusions,
    write_matrix_csv,
    write_records,
)
from .report import FORMATS, Report, build_report, render
from .simulator import InjectedAnomaly, generate, inject, random_profile

log = logging.getLogger("warpdiff")

EXIT_OK, EXIT_DEGRADED, EXIT_FATAL = 0, 1, 2
OUT_ENV = "WARPDIFF_OUT"
DEFAULT_OUT = "warpdiff-out"


def _read_text(path: str) -> str:
    return sys.stdin.read() if path == "-" else Path(path).read_text()


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def stage_csv_name(stage: str) -> str:
    return "matrix.csv" if stage == "total" else f"matrix_{stage}.csv"


# --- subcommands --------------------------------------------------------------

def cmd_compile(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    cases, excluded = compile_cases(manifest.cases, manifest.compiler, manifest.build_dir, force=args.recompile)
    write_manifest(dataclasses.replace(manifest, cases=tuple(cases)), out / "manifest.compiled.json")
    write_exclusions(excluded, out / "exclusions.json")
    print(f"compiled {len(cases)} cases, excluded {len(excluded)} -> {out}", file=sys.stderr)
    return EXIT_DEGRADED if excluded else EXIT_OK


def cmd_measure(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    cases, excluded = compile_cases(manifest.cases, manifest.compiler, manifest.build_dir, force=args.recompile)
    plan = manifest.plan(
        repetitions=args.reps,
        warmup_runs=args.warmup,
        timeout_s=args.timeout,
        interleaving=args.interleaving,
    )
    plan = dataclasses.replace(plan, cases=tuple(cases))

    def progress(case, rt, recs):
        statuses = {r.status for r in recs}
        mean = sum(r.timing.total_s for r in recs) / len(recs)
        print(f"  {case.id:<24} {rt.id:<16} {mean:9.4f}s  {','.join(sorted(statuses))}", file=sys.stderr)

    records = run_plan(plan, progress if not args.quiet else None)
    write_records(records, out / "records.jsonl")
    bundle = build_matrix(records, plan)
    excluded = excluded + bundle.exclusions
    write_matrix_csv(bundle.total, out / stage_csv_name("total"))
    for stage, m in bundle.stages.items():
        write_matrix_csv(m, out / stage_csv_name(stage))
    write_exclusions(excluded, out / "exclusions.json")
    (out / "config_digest.txt").write_text(manifest_digest(manifest) + "\n")
    n, k = bundle.total.shape
    print(f"measured {n} cases x {k} runtimes, excluded {len({e.case_id for e in excluded})} -> {out}",
          file=sys.stderr)
    return EXIT_DEGRADED if excluded else EXIT_OK


def _load_stage_matrices(stage_dir: str | None) -> dict[str, TimingMatrix] | None:
    if not stage_dir:
        return None
    found = {}
    for stage in STAGES:
        p = Path(stage_dir) / stage_csv_name(stage)
        if p.exists():
            found[stage] = read_matrix_csv(p, stage)
    return found or None


def cmd_analyze(args: argparse.Namespace) -> int:
    matrix = matrix_from_csv(_read_text(args.input))
    exclusions = read_exclusions(args.exclusions) if args.exclusions else []
    digest = names = None
    if args.manifest:
        manifest = load_manifest(args.manifest)
        digest = manifest_digest(manifest)
        names = {r.id: r.display_name for r in manifest.runtimes}
    report = build_report(
        matrix,
        exclusions=exclusions,
        stage_matrices=_load_stage_matrices(args.stages),
        config_digest=digest,
        runtime_names=names,
    )
    _write_text(args.output, render(report, args.format, args.top))
    return EXIT_DEGRADED if exclusions else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = Report.from_dict(json.loads(_read_text(args.input)))
    _write_text(args.output, render(report, args.format, args.top))
    return EXIT_OK


def _parse_injection(text: str) -> InjectedAnomaly:
    try:
        case, rt, factor = text.split(",")
        return InjectedAnomaly(int(case), int(rt), float(factor))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected CASE_INDEX,RUNTIME_INDEX,FACTOR with FACTOR > 1: {exc}")


def cmd_simulate(args: argparse.Namespace) -> int:
    matrix = generate(random_profile(args.seed, args.cases, args.runtimes, args.noise))
    for anomaly in args.inject or ():
        matrix = inject(matrix, anomaly)
    _write_text(args.output, matrix_to_csv(matrix))
    return EXIT_OK


def time_analysis(matrix: TimingMatrix, repeat: int) -> list[float]:
    """Wall time of ranking, localization and report assembly, ``repeat`` times."""
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        build_report(matrix)
        times.append(time.perf_counter() - t0)
    return times


def cmd_bench_overhead(args: argparse.Namespace) -> int:
    if args.input:
        matrix = matrix_from_csv(_read_text(args.input))
    else:
        matrix = generate(random_profile(args.seed, args.cases, args.runtimes, 0.05))
    n, k = matrix.shape
    result: dict = {"n_cases": n, "n_runtimes": k, "repeat": args.repeat, "budget_s": args.budget}
    times = time_analysis(matrix, args.repeat)
    result.update(mean_s=statistics.fmean(times), max_s=max(times),
                  std_s=statistics.stdev(times) if len(times) > 1 else 0.0)
    result["within_budget"] = result["max_s"] < args.budget

    if args.all_subsets:
        # every combination of m runtime settings, averaged per m
        per_size = {}
        for size in range(2, k + 1):
            subset_times = []
            for cols in itertools.combinations(range(k), size):
                sub = TimingMatrix(matrix.case_ids, [matrix.runtime_ids[c] for c in cols], matrix.values[:, cols])
                subset_times.extend(time_analysis(sub, args.repeat))
            per_size[size] = {"mean_s": statistics.fmean(subset_times), "max_s": max(subset_times),
                              "combinations": len(subset_times) // args.repeat}
        result["by_runtime_count"] = per_size
        result["within_budget"] = result["within_budget"] and all(v["max_s"] < args.budget for v in per_size.values())

    _write_text(args.output, json.dumps(result, indent=2) + "\n")
    return EXIT_OK if result["within_budget"] else EXIT_DEGRADED


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="warpdiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile manifest sources to wasm")
    c.add_argument("--manifest", required=True)
    c.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    c.add_argument("--recompile", action="store_true", help="ignore up-to-date outputs")
    c.set_defaults(func=cmd_compile)

    m = sub.add_parser("measure", help="run every case on every runtime and write timing matrices")
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    m.add_argument("--reps", type=int, help="measured runs per case and runtime (default 10)")
    m.add_argument("--warmup", type=int, help="discarded runs before measuring (default 1)")
    m.add_argument("--timeout", type=float, help="per-run timeout in seconds (default 300)")
    m.add_argument("--interleaving", choices=("by_case", "by_runtime"))
    m.add_argument("--recompile", action="store_true")
    m.add_argument("-q", "--quiet", action="store_true")
    m.set_defaults(func=cmd_measure)

    a = sub.add_parser("analyze", help="timing matrix CSV -> report")
    a.add_argument("input", nargs="?", default="-", help="matrix CSV (default stdin)")
    a.add_argument("--exclusions", help="exclusions JSON written by measure")
    a.add_argument("--stages", metavar="DIR", help="directory holding matrix_{init,load,exec}.csv")
    a.add_argument("--manifest", help="manifest used for measuring (digest and display names)")
    a.add_argument("--format", choices=FORMATS, default="json")
    a.add_argument("--top", type=int, default=10)
    a.add_argument("-o", "--output", default="-")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="render a report JSON as a table")
    r.add_argument("input", nargs="?", default="-", help="report JSON (default stdin)")
    r.add_argument("--top", type=int, default=10)
    r.add_argument("--format", choices=FORMATS, default="txt")
    r.add_argument("-o", "--output", default="-")
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("simulate", help="write a synthetic timing matrix CSV")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cases", type=int, default=120)
    s.add_argument("--runtimes", type=int, default=7)
    s.add_argument("--noise", type=float, default=0.05, help="lognormal noise sigma")
    s.add_argument("--inject", type=_parse_injection, action="append", metavar="I,J,FACTOR",
                   help="multiply cell (I, J) by FACTOR; repeatable")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench-overhead", help="time the analysis step")
    b.add_argument("input", nargs="?", help="matrix CSV; default: simulated matrix")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--cases", type=int, default=123)
    b.add_argument("--runtimes", type=int, default=7)
    b.add_argument("--repeat", type=int, default=10)
    b.add_argument("--budget", type=float, default=1.0, help="seconds; exit 1 if exceeded")
    b.add_argument("--all-subsets", action="store_true", help="also time every runtime subset")
    b.add_argument("-o", "--output", default="-")
    b.set_defaults(func=cmd_bench_overhead)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "top", 1) < 1:
        parser.error("--top must be >= 1")
    try:
        return args.func(args)
    except (WarpDiffError, OSError, ValueError, KeyError) as exc:
        print(f"warpdiff: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
