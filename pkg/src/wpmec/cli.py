"""Command-line front end.

Three subcommands: ``solve`` runs the full design on one realisation,
``baseline --kind`` runs one of the reference schemes, ``sweep --spec``
fans a parameter grid out to CSV.  All printed numbers use fixed
formats and never include timing, so identical inputs produce identical
bytes.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .config import SystemConfig, load_config, table2_profile
from .conic import SubproblemError
from .errors import InfeasibleError
from .model import build_scenario
from .pipeline import BASELINE_KINDS, load_sweep, run_baseline, run_sweep, solve_p0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file layered over the base profile")
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--out", help="write results to this CSV")
    parser.add_argument("--trace", help="write per-iteration objective trace to this CSV")
    parser.add_argument("--quiet", action="store_true", help="suppress the stdout summary")
    parser.add_argument("--table2", action="store_true",
                        help="start from the measurement-campaign profile instead of the desk one")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wpmec",
        description="Computation-rate maximisation for surface-assisted wireless-powered MEC")
    sub = parser.add_subparsers(dest="command", required=True)
    p_solve = sub.add_parser("solve", help="solve one full block")
    _add_common(p_solve)
    p_base = sub.add_parser("baseline", help="run a reference scheme")
    p_base.add_argument("--kind", required=True, choices=BASELINE_KINDS)
    _add_common(p_base)
    p_sweep = sub.add_parser("sweep", help="run a parameter sweep to CSV")
    p_sweep.add_argument("--spec", required=True, help="sweep description file")
    _add_common(p_sweep)
    return parser


def _load_base_config(args) -> SystemConfig:
    base = table2_profile() if args.table2 else SystemConfig()
    if args.config:
        return load_config(args.config, base=base)
    return base


def _summary_lines(alloc, report) -> list:
    fmt_arr = lambda arr: " ".join(f"{x:.6e}" for x in arr)  # noqa: E731
    lines = [
        f"objective_bits = {alloc.objective_bits:.6f}",
        f"sum_rate_bps = {alloc.sum_rate_bps:.6f}",
        f"tau1_s = {alloc.tau1_s:.9f}",
        f"tau2_s = {alloc.tau2_s:.9f}",
        f"t1_s = {alloc.t1_s:.9f}",
        f"p_tx_w = {fmt_arr(alloc.p_tx_w)}",
        f"f_hz = {fmt_arr(alloc.f_hz)}",
        f"grid_points_evaluated = {len(report.grid_objectives)}",
        f"grid_points_skipped = {len(report.skipped_grid_points)}",
        f"inner_iters = {report.inner_iters}",
        f"outer_iters = {report.outer_iters}",
    ]
    return lines


def _write_summary_csv(path: str, alloc, report) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field", "value"])
        writer.writerow(["objective_bits", f"{alloc.objective_bits:.6f}"])
        writer.writerow(["sum_rate_bps", f"{alloc.sum_rate_bps:.6f}"])
        writer.writerow(["tau1_s", f"{alloc.tau1_s:.9f}"])
        writer.writerow(["tau2_s", f"{alloc.tau2_s:.9f}"])
        writer.writerow(["t1_s", f"{alloc.t1_s:.9f}"])
        for k, (p, f) in enumerate(zip(alloc.p_tx_w, alloc.f_hz)):
            writer.writerow([f"p_tx_w_{k}", f"{p:.6e}"])
            writer.writerow([f"f_hz_{k}", f"{f:.6e}"])
        writer.writerow(["inner_iters", str(report.inner_iters)])
        writer.writerow(["outer_iters", str(report.outer_iters)])
        for tau2, obj in report.grid_objectives:
            writer.writerow([f"grid_{tau2:.9f}", f"{obj:.6f}"])


def _write_trace_csv(path: str, report) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "outer_round", "inner_step", "objective"])
        for stage, outer, values in report.inner_trace:
            for step, value in enumerate(values):
                writer.writerow([stage, str(outer), str(step), f"{value:.12e}"])


def _emit(alloc, report, args) -> None:
    if not args.quiet:
        for line in _summary_lines(alloc, report):
            print(line)
    if args.out:
        _write_summary_csv(args.out, alloc, report)
    if args.trace:
        _write_trace_csv(args.trace, report)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_base_config(args)
        if args.command == "solve":
            scenario = build_scenario(cfg, args.seed)
            alloc, report = solve_p0(scenario)
            _emit(alloc, report, args)
        elif args.command == "baseline":
            scenario = build_scenario(cfg, args.seed)
            alloc, report = run_baseline(args.kind, scenario)
            _emit(alloc, report, args)
        else:
            spec = load_sweep(args.spec)
            out = args.out or "sweep.csv"
            rows = run_sweep(spec, cfg, out)
            if not args.quiet:
                print(f"wrote {len(rows)} rows to {out}")
                failed = sum(1 for row in rows if row[11] != "ok")
                if failed:
                    print(f"{failed} rows failed; see the status column")
        return 0
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InfeasibleError, SubproblemError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
