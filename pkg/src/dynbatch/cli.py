"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluator import DEFAULT_DELTA, NumericalError, auto_truncate, evaluate, solve
from .experiments import (
    DEFAULT_W2_GRID,
    BenchmarkRow,
    InfeasibleSlo,
    MeanBound,
    PercentileBound,
    RunManifest,
    SatisfactionBound,
    TradeoffPoint,
    TruncationRow,
    attach_simulations,
    benchmark_policies,
    benchmark_suite,
    evaluation_model,
    min_accepted_s_max,
    select_weight_for_slo,
    tradeoff_sweep,
    truncation_study,
    write_rows,
)
from .policy import ControlLimit, Greedy, SolverError, Static, Table, closed_form_Q, linear_search_Q
from .queue_model import ConfigError, FitError, SystemConfig, Weights, basic_scenario, fit_affine, load_config
from .simulator import SimStats, SimulationError, simulate, write_histogram_csv, write_trace_csv
from .smdp import build_truncated
from .solver import DEFAULT_EPSILON, DEFAULT_ITER_MAX, read_policy_csv, write_policy_csv

log = logging.getLogger("dynbatch")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class NonConvergence(Exception):
    pass


# ---------------------------------------------------------------------------
# Argument helpers.
# ---------------------------------------------------------------------------


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def s_max_arg(text: str) -> int | None:
    if text == "auto":
        return None
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--s-max takes an integer or 'auto'") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--s-max must be positive")
    return n


def seed_arg(text: str) -> int:
    n = int(text)
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError("--seed must be an unsigned 64-bit integer")
    return n


def parse_policy(text: str):
    """greedy | static:B | control:Q | table:PATH"""
    kind, _, arg = text.partition(":")
    try:
        if kind == "greedy":
            return Greedy()
        if kind == "static":
            return Static(int(arg))
        if kind == "control":
            return ControlLimit(int(arg))
        if kind == "table":
            arr, header = read_policy_csv(arg)
            return Table.from_array(arr, header or "table")
    except ValueError as exc:
        raise ConfigError(f"bad policy {text!r}: {exc}") from None
    raise ConfigError(f"unknown policy {text!r}; use greedy, static:B, control:Q or table:PATH")


def common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("system")
    g.add_argument("--config", type=Path, help="JSON system configuration")
    g.add_argument("--rho", type=float, help="normalized load; overrides the config's arrival rate")
    g.add_argument("--w1", type=float, default=1.0)
    g.add_argument("--w2", type=float, default=0.0)
    g.add_argument("--c-o", type=float, default=None, help="abstract overflow cost (default scales with w2/w1)")
    g.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    g.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    g.add_argument("--iter-max", type=int, default=DEFAULT_ITER_MAX)
    g.add_argument("--s-max", type=s_max_arg, default=None, metavar="N|auto")
    g.add_argument("--seed", type=seed_arg, default=0)
    g.add_argument("--requests", type=int, default=1_000_000)
    g.add_argument("--out", type=Path, default=Path("."))
    g.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    g.add_argument("--precision", type=int, default=6, help="significant digits in printed and CSV output")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def load_system(args) -> SystemConfig:
    config = load_config(args.config) if args.config else basic_scenario(0.5)
    if args.rho is not None:
        config = config.with_rho(args.rho)
    return config


def weights_of(args) -> Weights:
    return Weights(args.w1, args.w2)


def formatter(precision: int):
    def fmt(x) -> str:
        return f"{float(x):.{precision}g}"
    return fmt


def prepare_out(args) -> Path:
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def manifest(args, command: str, config: SystemConfig | None, seeds=()) -> RunManifest:
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k not in ("func", "verbose")}
    return RunManifest(command, params, config.to_dict() if config else None, list(seeds))


def report_lines(report, fmt) -> list[str]:
    return [
        f"gain      {fmt(report.gain)}",
        f"delta     {fmt(report.delta)}  ({'accepted' if report.accepted else 'NOT accepted'})",
        f"W_bar_ms  {fmt(report.w_bar)}",
        f"P_bar_W   {fmt(report.p_bar)}",
        f"L_bar     {fmt(report.l_bar)}",
        f"s_max     {report.s_max}",
    ]


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def read_fit_points(path: Path) -> dict[str, list[tuple[float, float]]]:
    """CSV with a header containing ``b`` and one or both of ``latency_ms`` and
    ``energy_mJ``; empty cells are skipped."""
    series: dict[str, list[tuple[float, float]]] = {"latency_ms": [], "energy_mJ": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        if "b" not in header or not any(c in header for c in series):
            raise ConfigError(f"{path}:1: header needs 'b' and 'latency_ms' and/or 'energy_mJ'")
        ib = header.index("b")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                b = float(row[ib])
                for col in series:
                    if col in header and row[header.index(col)].strip():
                        series[col].append((b, float(row[header.index(col)])))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return {k: v for k, v in series.items() if v}


def cmd_fit(args) -> int:
    fmt = formatter(args.precision)
    fragment = {}
    for col, pts in read_fit_points(args.points).items():
        slope, intercept, rms = fit_affine(pts)
        name = "latency" if col == "latency_ms" else "energy"
        print(f"{name}: slope={fmt(slope)} intercept={fmt(intercept)} rms_residual={fmt(rms)} n={len(pts)}")
        fragment[name] = {"form": "affine", "slope": slope, "intercept": intercept}
    if args.write_config:
        args.write_config.write_text(json.dumps(fragment, indent=2) + "\n")
    return EXIT_OK


def _solve(args, config, weights):
    if args.s_max is None:
        sol = auto_truncate(config, weights, args.c_o, args.delta, args.epsilon, args.iter_max)
    else:
        sol = solve(config, weights, args.s_max, args.c_o, args.delta, args.epsilon, args.iter_max)
    if not sol.rvi.converged:
        raise NonConvergence(f"relative value iteration hit iter_max={args.iter_max} "
                             f"(span {sol.rvi.final_span:.3g} >= {args.epsilon})")
    return sol


def cmd_solve(args) -> int:
    config, weights = load_system(args), weights_of(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "solve", config)
    sol = _solve(args, config, weights)
    write_policy_csv(out / "policy.csv", sol.rvi.policy_table,
                     f"s_max={sol.s_max} w1={weights.w1} w2={weights.w2} c_o={sol.model.c_o}")
    write_rows(out / "report.csv", sol.report.CSV_HEADER, [sol.report.csv_row(fmt)])
    man.write(out)
    for line in report_lines(sol.report, fmt):
        print(line)
    print(f"iterations {sol.rvi.iterations}")
    if not sol.report.accepted:
        log.warning("overflow share %.3g exceeds delta %.3g; increase --s-max", sol.report.delta, args.delta)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config, weights = load_system(args), weights_of(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "evaluate", config)
    policy = parse_policy(args.policy)
    policy.check(config)
    if args.s_max is None:
        s_max = evaluation_model(config, [policy], args.delta).s_max
    else:
        s_max = args.s_max
    report = evaluate(build_truncated(config, weights, s_max, args.c_o), policy, args.delta)
    write_rows(out / "report.csv", report.CSV_HEADER, [report.csv_row(fmt)])
    man.write(out)
    for line in report_lines(report, fmt):
        print(line)
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_system(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "simulate", config, [args.seed])
    policy = parse_policy(args.policy)
    policy.check(config)
    stats = simulate(config, policy, args.requests, args.warmup, args.seed, keep_trace=args.trace)
    write_rows(out / "sim.csv", SimStats.CSV_HEADER, [stats.csv_row(fmt)])
    if args.trace:
        write_trace_csv(out / "latencies.csv", stats)
    if args.hist_bin:
        write_histogram_csv(out / "histogram.csv", stats, args.hist_bin)
    man.write(out)
    print(f"W_bar_ms {fmt(stats.w_bar)} (+/- {fmt(stats.w_stderr)})")
    print(f"P_bar_W  {fmt(stats.p_bar)}")
    print(f"L_bar    {fmt(stats.l_bar)}")
    for q, v in stats.percentiles.items():
        print(f"p{100 * q:g}_ms  {fmt(v)}")
    if args.slo is not None:
        print(f"SLO {fmt(args.slo)} ms satisfied by {fmt(100 * stats.slo_satisfaction(args.slo))}%")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_system(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "sweep", config)
    points, _ = tradeoff_sweep(config, args.w2_grid, args.c_o, args.delta, args.epsilon, args.iter_max,
                               args.w1, jobs=args.jobs)
    write_rows(out / "tradeoff.csv", TradeoffPoint.CSV_HEADER, [p.csv_row(fmt) for p in points])
    for p in points:
        if p.policy is not None:
            write_policy_csv(out / f"policy_w2={p.w2:g}.csv", np.array(p.policy.actions), p.policy_id)
    man.write(out)
    for p in points:
        print(f"w2={fmt(p.w2)} W_bar_ms={fmt(p.w_bar)} P_bar_W={fmt(p.p_bar)} eff={fmt(p.energy_efficiency)}")
    return EXIT_OK if all(p.converged for p in points) else EXIT_NUMERIC


def cmd_select(args) -> int:
    config = load_system(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "select", config, [args.seed])
    if args.mean is not None:
        constraint = MeanBound(args.mean)
    elif args.percentile is not None:
        constraint = PercentileBound(args.percentile[0] / 100.0, args.percentile[1])
    else:
        constraint = SatisfactionBound(args.satisfaction[0] / 100.0, args.satisfaction[1])
    points, _ = tradeoff_sweep(config, args.w2_grid, args.c_o, args.delta, args.epsilon, args.iter_max,
                               args.w1, jobs=args.jobs)
    if not isinstance(constraint, MeanBound):
        attach_simulations(config, points, args.requests, args.seed)
    man.write(out)
    try:
        chosen = select_weight_for_slo(points, constraint)
    except InfeasibleSlo as exc:
        print(f"infeasible: {exc}")
        if exc.closest is not None:
            print(f"closest: w2={fmt(exc.closest.w2)} W_bar_ms={fmt(exc.closest.w_bar)}")
        return EXIT_INPUT
    write_policy_csv(out / "policy.csv", np.array(chosen.policy.actions), chosen.policy_id)
    print(f"w2={fmt(chosen.w2)} W_bar_ms={fmt(chosen.w_bar)} P_bar_W={fmt(chosen.p_bar)}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    config = load_system(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "benchmark", config)
    benches = benchmark_policies(config, args.static)
    rows = benchmark_suite(config, args.w2_grid, benches, args.c_o, args.delta, args.epsilon, args.w1,
                           jobs=args.jobs)
    write_rows(out / "benchmark.csv", BenchmarkRow.CSV_HEADER, [r.csv_row(fmt) for r in rows])
    man.write(out)
    for r in rows:
        print(f"w2={fmt(r.w2)} {r.policy_id:<10} cost={fmt(r.gain)}")
    return EXIT_OK


def cmd_truncation(args) -> int:
    config, weights = load_system(args), weights_of(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "truncation", config)
    if args.s_max_grid:
        rows = truncation_study(config, weights, args.c_o_grid, args.s_max_grid, args.delta, args.epsilon,
                                args.iter_max)
    else:
        rows = []
        for c in args.c_o_grid:
            best, tried = min_accepted_s_max(config, weights, c, args.delta, args.epsilon, args.iter_max)
            rows.extend(tried)
            print(f"c_o={fmt(c)} min accepted s_max={best.s_max} gain={fmt(best.gain)} iterations={best.iterations}")
    write_rows(out / "truncation.csv", TruncationRow.CSV_HEADER, [r.csv_row(fmt) for r in rows])
    man.write(out)
    if args.s_max_grid:
        for r in rows:
            print(f"c_o={fmt(r.c_o)} s_max={r.s_max} gain={fmt(r.gain)} delta={fmt(r.delta)} "
                  f"iterations={r.iterations} accepted={int(r.accepted)}")
    return EXIT_OK


def cmd_qsearch(args) -> int:
    config, weights = load_system(args), weights_of(args)
    out = prepare_out(args)
    man = manifest(args, "qsearch", config)
    s_max = args.s_max
    if s_max is None:
        policies = [ControlLimit(q) for q in range(1, config.b_max + 1)]
        s_max = evaluation_model(config, policies, args.delta).s_max
    q = linear_search_Q(config, weights, s_max, args.c_o)
    write_rows(out / "qsearch.csv", ("s_max", "Q"), [[s_max, q]])
    man.write(out)
    print(f"Q {q}")
    return EXIT_OK


def cmd_closedform(args) -> int:
    config, weights = load_system(args), weights_of(args)
    out, fmt = prepare_out(args), formatter(args.precision)
    man = manifest(args, "closedform", config)
    res = closed_form_Q(config, weights)
    rows = [["psi", fmt(res.psi)], ["xi", fmt(res.xi)], ["chi", fmt(res.chi)], ["r", fmt(res.r)]]
    rows += [[f"D_{q}", fmt(d)] for q, d in enumerate(res.d_q, start=1)]
    rows.append(["Q", res.optimal_q])
    write_rows(out / "closedform.csv", ("quantity", "value"), rows)
    man.write(out)
    for k, v in rows:
        print(f"{k:<5} {v}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point.
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = common_parser()
    parser = argparse.ArgumentParser(prog="dynbatch", description="Latency/energy-optimal dynamic batching.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="affine fit of latency/energy measurements")
    p.add_argument("points", type=Path, help="CSV with columns b, latency_ms and/or energy_mJ")
    p.add_argument("--write-config", type=Path, help="write the fitted functions as a JSON fragment")
    p.add_argument("--precision", type=int, default=6)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("solve", parents=[common], help="solve the SMDP for one weight pair")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", parents=[common], help="exact evaluation of a fixed policy")
    p.add_argument("--policy", required=True, help="greedy | static:B | control:Q | table:PATH")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common], help="discrete-event simulation of a policy")
    p.add_argument("--policy", required=True, help="greedy | static:B | control:Q | table:PATH")
    p.add_argument("--warmup", type=float, default=0.05, help="fraction of requests discarded")
    p.add_argument("--trace", action="store_true", help="write per-request latencies.csv")
    p.add_argument("--hist-bin", type=float, default=None, help="write histogram.csv with this bin width (ms)")
    p.add_argument("--slo", type=float, default=None, help="report the share of requests within this bound (ms)")
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("sweep", cmd_sweep, "latency/power tradeoff over a w2 grid"),
                                 ("benchmark", cmd_benchmark, "SMDP against greedy and static policies")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--w2-grid", type=float_list, default=list(DEFAULT_W2_GRID))
        if name == "benchmark":
            p.add_argument("--static", type=int_list, default=[8, 16, 32], help="static batch sizes")
        p.set_defaults(func=func)

    p = sub.add_parser("select", parents=[common], help="largest w2 meeting a latency objective")
    p.add_argument("--w2-grid", type=float_list, default=list(DEFAULT_W2_GRID))
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--mean", type=float, metavar="MS")
    g.add_argument("--percentile", type=float, nargs=2, metavar=("Q", "MS"), help="e.g. 95 10")
    g.add_argument("--satisfaction", type=float, nargs=2, metavar=("PCT", "MS"), help="e.g. 99 12")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("truncation", parents=[common], help="effect of c_o and s_max on the solution")
    p.add_argument("--c-o-grid", type=float_list, default=[0.0, 10.0, 100.0, 1000.0, 10000.0])
    p.add_argument("--s-max-grid", type=int_list, default=None,
                   help="full factorial over these s_max; omit to search the minimum accepted s_max")
    p.set_defaults(func=cmd_truncation)

    p = sub.add_parser("qsearch", parents=[common], help="best control limit by exhaustive evaluation")
    p.set_defaults(func=cmd_qsearch)

    p = sub.add_parser("closedform", parents=[common], help="closed-form optimal control limit")
    p.set_defaults(func=cmd_closedform)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NonConvergence, NumericalError, SolverError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
