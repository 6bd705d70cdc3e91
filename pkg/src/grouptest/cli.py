"""``grouptest`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 runtime or
parse error.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import sim
from .core import InfeasibleCheck, InvalidInput, make_rng
from .nonadaptive import (
    MatrixFormatError,
    format_matrix,
    gen_detectone_design,
    gen_restricted_matrix,
    read_matrix,
)
from .verify import check_restricted, check_restricted_sampled

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _summary_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary" + (out.suffix or ".csv"))


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.write_text(text, newline="")
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from exc


def _emit_tables(args, payload: dict, records, record_fields, summaries, summary_fields) -> None:
    """JSON: one object.  CSV: records to --out, summary to a sibling ``.summary.csv``."""
    record_dicts, fields = sim.record_rows(records, record_fields, args.timing)
    if args.format == "json":
        if not args.timing:
            for r in record_dicts:
                r.pop("wall_time", None)
        payload = dict(payload, records=record_dicts, summary=summaries)
        _emit(sim.to_json(payload), args.out)
        return
    rec_csv = sim.to_csv(record_dicts, fields)
    sum_csv = sim.to_csv(summaries, summary_fields)
    if args.out is None:
        _emit(rec_csv + "\r\n" + sum_csv, None)
    else:
        _emit(rec_csv, args.out)
        _emit(sum_csv, _summary_path(args.out))


def cmd_simulate(args) -> int:
    cfg = sim.ExperimentConfig(args.n, args.d, args.l, args.delta, args.alg, args.trials, args.seed, args.D)
    records = sim.run_experiment(cfg, args.jobs)
    summary = sim.summarize(cfg, records)
    _emit_tables(args, {"config": asdict(cfg)}, records, sim.RECORD_FIELDS, [summary], sim.SUMMARY_FIELDS)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cells = list(itertools.product(args.n, args.d, args.l))
    if not cells:
        raise UsageError("empty sweep grid")
    configs = [sim.ExperimentConfig(n, d, l, args.delta, args.alg, args.trials, args.seed) for n, d, l in cells]
    rows = [sim.summarize(cfg, sim.run_experiment(cfg, args.jobs)) for cfg in configs]
    payload = {"alg": args.alg, "delta": args.delta, "trials": args.trials, "seed": args.seed}
    if args.format == "json":
        _emit(sim.to_json(dict(payload, cells=rows)), args.out)
    else:
        _emit(sim.to_csv(rows, sim.SUMMARY_FIELDS), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = sim.EstimateConfig(args.n, args.d, args.delta, args.estimator, args.trials, args.seed)
    records = sim.run_estimates(cfg, args.jobs)
    summary = sim.summarize_estimates(cfg, records)
    _emit_tables(args, {"config": asdict(cfg)}, records, sim.ESTIMATE_FIELDS, [summary], sim.ESTIMATE_SUMMARY_FIELDS)
    return EXIT_OK


def cmd_genmatrix(args) -> int:
    if args.kind == "detectone":
        matrix = gen_detectone_design(args.n).matrix
    else:
        if args.r is None or args.s is None:
            raise UsageError("--r and --s are required for restricted matrices")
        matrix = gen_restricted_matrix(args.n, args.r, args.s, args.delta, make_rng(args.seed))
    _emit(format_matrix(matrix), args.out)
    return EXIT_OK


def cmd_verify_matrix(args) -> int:
    matrix = read_matrix(args.matrix)
    if args.samples:
        verdict = check_restricted_sampled(matrix, args.r, args.s, args.samples, make_rng(args.seed))
    else:
        verdict = check_restricted(matrix, args.r, args.s)
    lines = [f"{'PASS' if verdict.ok else 'FAIL'} r={args.r} s={args.s} min_isolated={verdict.min_isolated}"]
    if verdict.witness is not None:
        lines.append("witness " + " ".join(map(str, verdict.witness)))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if verdict.ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grouptest", description="Detect-ℓ group testing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def output(p, formats=True):
        if formats:
            p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--out", type=Path, default=None, metavar="PATH")

    def runs(p):
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--trials", type=int, default=100)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--timing", action="store_true", help="include per-trial wall time (not reproducible)")

    p = sub.add_parser("simulate", help="Monte Carlo trials of one detection algorithm")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--D", type=int, default=None, help="estimate of d given to known-d algorithms (default d)")
    p.add_argument("--alg", choices=sorted(sim.ALGORITHMS), required=True)
    runs(p)
    output(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="summary row per (n, d, l) cell")
    p.add_argument("--n", type=_int_list, required=True)
    p.add_argument("--d", type=_int_list, required=True)
    p.add_argument("--l", type=_int_list, required=True)
    p.add_argument("--alg", choices=sorted(sim.ALGORITHMS), required=True)
    runs(p)
    output(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("estimate", help="Monte Carlo trials of a defective-count estimator")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--estimator", choices=list(sim.ESTIMATORS), required=True)
    runs(p)
    output(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("genmatrix", help="write a pooling matrix file")
    p.add_argument("--kind", choices=["restricted", "detectone"], default="restricted")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    output(p, formats=False)
    p.set_defaults(func=cmd_genmatrix)

    p = sub.add_parser("verify-matrix", help="check the (r, s)-restricted weight-one property")
    p.add_argument("matrix", type=Path)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--samples", type=int, default=0, help="sample this many subsets instead of enumerating")
    p.add_argument("--seed", type=int, default=0)
    output(p, formats=False)
    p.set_defaults(func=cmd_verify_matrix)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MatrixFormatError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InvalidInput, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleCheck, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
