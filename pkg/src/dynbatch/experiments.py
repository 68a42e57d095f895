"""Weight sweeps, benchmark comparisons, SLO-driven weight selection and the
truncation study."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .evaluator import DEFAULT_DELTA, EvalReport, Solution, TruncationError, auto_truncate, evaluate, solve
from .policy import Greedy, Policy, Static, Table, is_stabilizing
from .queue_model import SystemConfig, Weights
from .simulator import SimStats, simulate
from .smdp import build_truncated
from .solver import DEFAULT_EPSILON, DEFAULT_ITER_MAX

log = logging.getLogger(__name__)

DEFAULT_W2_GRID = tuple(round(0.1 * i, 10) for i in range(21)) + (3.0, 5.0, 10.0, 15.0, 100.0)
DEFAULT_BENCHMARK_SIZES = (8, 16, 32)


@dataclass
class TradeoffPoint:
    w2: float
    w_bar: float
    p_bar: float
    energy_efficiency: float  # requests per joule
    policy_id: str
    policy: Table | None = None
    s_max: int = 0
    gain: float = math.nan
    converged: bool = True
    sim: SimStats | None = None

    CSV_HEADER = ("w2", "w_bar_ms", "p_bar_W", "eff_req_per_J", "policy", "s_max", "converged")

    def csv_row(self, fmt=repr) -> list:
        return [fmt(self.w2), fmt(self.w_bar), fmt(self.p_bar), fmt(self.energy_efficiency), self.policy_id,
                self.s_max, int(self.converged)]


def efficiency(config: SystemConfig, p_bar: float) -> float:
    # lam in req/ms, power in mJ/ms; requests per joule = 1000 * lam / p_bar
    return 1000.0 * config.lam / p_bar if p_bar > 0 else math.inf


def evaluation_model(config: SystemConfig, policies: Sequence[Policy], delta: float = DEFAULT_DELTA,
                     start: int | None = None, growth: float = 1.5, cap: int = 4096):
    """Smallest s_max on the geometric schedule at which every stabilising
    policy in ``policies`` has overflow share below ``delta``.

    The model uses latency-only weights and no abstract cost, so gain is the
    pure mean response time and policies can be compared on one footing.
    """
    s_max = max(start or config.b_max, config.b_max)
    stable = [p for p in policies if is_stabilizing(p, config)]
    while s_max <= cap:
        model = build_truncated(config, Weights(1.0, 0.0), s_max, 0.0)
        if all(evaluate(model, p, delta).accepted for p in stable):
            return model
        s_max = max(s_max + 1, math.ceil(s_max * growth))
    raise TruncationError(f"no common s_max <= {cap} accepts all policies")


def measure(model, policy: Policy, delta: float = DEFAULT_DELTA) -> EvalReport | None:
    """Latency/power report on an evaluation model, or None if unstable."""
    if not is_stabilizing(policy, model.config):
        return None
    return evaluate(model, policy, delta)


def tradeoff_sweep(config: SystemConfig, w2_grid: Iterable[float] = DEFAULT_W2_GRID, c_o: float | None = None,
                   delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON,
                   iter_max: int = DEFAULT_ITER_MAX, w1: float = 1.0,
                   extra_policies: Sequence[Policy] = (), jobs: int | None = 1,
                   ) -> tuple[list[TradeoffPoint], object]:
    """Solve one SMDP per w2 and report all (W, P) pairs on a common model.

    Returns ``(points, eval_model)``; ``extra_policies`` are included when
    sizing the common model so benchmarks can be measured on it too.
    """
    grid = sorted(set(float(w) for w in w2_grid))
    if not grid or min(grid) < 0:
        raise ValueError("w2 grid must be non-empty and nonnegative")
    args = [(config, Weights(w1, w2), c_o, delta, epsilon, iter_max) for w2 in grid]
    if jobs is not None and jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            sols = list(pool.map(_solve_point, args))
    else:
        sols = [_solve_point(a) for a in args]
    solved = list(zip(grid, sols))
    tables = [Table.from_array(s.rvi.policy_table, f"smdp-w2={w2:g}") for w2, s in solved if s is not None]
    start = max((s.s_max for _, s in solved if s is not None), default=config.b_max)
    model = evaluation_model(config, [*tables, *extra_policies], delta, start)
    points = []
    for w2, sol in solved:
        if sol is None:
            points.append(TradeoffPoint(w2, math.nan, math.nan, math.nan, "unsolved", converged=False))
            continue
        table = Table.from_array(sol.rvi.policy_table, f"smdp-w2={w2:g}")
        rep = measure(model, table, delta)
        w_bar, p_bar = (rep.w_bar, rep.p_bar) if rep else (math.inf, math.nan)
        points.append(TradeoffPoint(w2, w_bar, p_bar, efficiency(config, p_bar), table.id, table, sol.s_max,
                                    sol.report.gain, sol.rvi.converged))
    check_monotone(points)
    return points, model


def _solve_point(args) -> Solution | None:
    config, weights, c_o, delta, epsilon, iter_max = args
    try:
        return auto_truncate(config, weights, c_o, delta, epsilon, iter_max)
    except TruncationError as exc:
        log.warning("w2=%g: %s", weights.w2, exc)
        return None


def check_monotone(points: Sequence[TradeoffPoint], slack: float = 1e-6) -> list[str]:
    warnings = []
    good = [p for p in points if math.isfinite(p.w_bar)]
    for a, b in zip(good, good[1:]):
        if b.w_bar < a.w_bar - slack:
            warnings.append(f"W decreased from w2={a.w2:g} to w2={b.w2:g}")
        if b.p_bar > a.p_bar + slack:
            warnings.append(f"P increased from w2={a.w2:g} to w2={b.w2:g}")
    for w in warnings:
        log.warning(w)
    return warnings


def benchmark_policies(config: SystemConfig, sizes: Sequence[int] = DEFAULT_BENCHMARK_SIZES) -> list[Policy]:
    out: list[Policy] = [Greedy()]
    for b in sizes:
        if config.b_min <= b <= config.b_max:
            out.append(Static(b))
        else:
            log.info("static batch size %d outside [%d, %d]; skipped", b, config.b_min, config.b_max)
    return out


def weakly_dominates(point: TradeoffPoint, w_bar: float, p_bar: float, tol: float = 1e-6) -> bool:
    return point.w_bar <= w_bar + tol and point.p_bar <= p_bar + tol


def pareto_check(points: Sequence[TradeoffPoint], w_bar: float, p_bar: float, tol: float = 1e-6) -> str | None:
    """How the sweep covers a benchmark pair: ``"point"`` if a single sweep
    point weakly dominates it, ``"hull"`` if it lies on or above the
    piecewise-linear sweep curve (a time-sharing of two adjacent sweep
    policies dominates it), else None."""
    good = sorted((p for p in points if math.isfinite(p.w_bar)), key=lambda p: p.w_bar)
    if any(weakly_dominates(p, w_bar, p_bar, tol) for p in good):
        return "point"
    for a, b in zip(good, good[1:]):
        if a.w_bar - tol <= w_bar <= b.w_bar + tol and b.w_bar > a.w_bar:
            frac = (w_bar - a.w_bar) / (b.w_bar - a.w_bar)
            if a.p_bar + frac * (b.p_bar - a.p_bar) <= p_bar + tol:
                return "hull"
    return None


def indifference_weight(a: TradeoffPoint, b: TradeoffPoint, w1: float = 1.0) -> float | None:
    """Weight w2 at which w1*W + w2*P is equal for two sweep points."""
    if not (b.w_bar > a.w_bar and a.p_bar > b.p_bar):
        return None
    return w1 * (b.w_bar - a.w_bar) / (a.p_bar - b.p_bar)


def pareto_sweep(config: SystemConfig, benchmarks: Sequence[Policy] | None = None,
                 w2_grid: Iterable[float] = DEFAULT_W2_GRID, c_o: float | None = None,
                 delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON, w1: float = 1.0,
                 max_rounds: int = 8, tol: float = 1e-6, jobs: int | None = 1):
    """Sweep, then insert indifference weights between the sweep points that
    bracket any benchmark not yet covered, until every stable benchmark is
    covered or no new weight appears.

    Returns ``(points, model, coverage)`` with coverage mapping policy id to
    the :func:`pareto_check` result (None if uncovered or unstable).
    """
    benchmarks = list(benchmarks) if benchmarks is not None else benchmark_policies(config)
    grid = sorted(set(float(w) for w in w2_grid))
    for _ in range(max_rounds + 1):
        points, model = tradeoff_sweep(config, grid, c_o, delta, epsilon, w1=w1, extra_policies=benchmarks,
                                       jobs=jobs)
        reports = {p.id: measure(model, p, delta) for p in benchmarks}
        coverage = {pid: (pareto_check(points, r.w_bar, r.p_bar, tol) if r else None)
                    for pid, r in reports.items()}
        good = sorted((p for p in points if math.isfinite(p.w_bar)), key=lambda p: p.w_bar)
        new = set()
        for pid, r in reports.items():
            if r is None or coverage[pid] == "point":
                continue
            for a, b in zip(good, good[1:]):
                if a.w_bar <= r.w_bar <= b.w_bar:
                    w = indifference_weight(a, b, w1)
                    if w is not None and all(abs(w - g) > 1e-9 for g in grid):
                        new.add(w)
        if not new:
            break
        grid = sorted(set(grid) | new)
    return points, model, coverage


@dataclass
class BenchmarkRow:
    w2: float
    policy_id: str
    gain: float
    w_bar: float
    p_bar: float
    stable: bool

    CSV_HEADER = ("w2", "policy", "gain", "w_bar_ms", "p_bar_W", "stable")

    def csv_row(self, fmt=repr) -> list:
        return [fmt(self.w2), self.policy_id, fmt(self.gain), fmt(self.w_bar), fmt(self.p_bar), int(self.stable)]


def benchmark_suite(config: SystemConfig, w2_grid: Iterable[float], benchmarks: Sequence[Policy] | None = None,
                    c_o: float | None = None, delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON,
                    w1: float = 1.0, jobs: int | None = 1) -> list[BenchmarkRow]:
    """Average cost of the SMDP policy and each benchmark at every weight.

    All policies are measured on one latency/power evaluation model and the
    weighted cost is recombined as w1*W + w2*P, so the comparison does not
    depend on the abstract cost used while solving.
    """
    benchmarks = list(benchmarks) if benchmarks is not None else benchmark_policies(config)
    points, model = tradeoff_sweep(config, w2_grid, c_o, delta, epsilon, w1=w1, extra_policies=benchmarks,
                                   jobs=jobs)
    bench = {p.id: measure(model, p, delta) for p in benchmarks}
    rows = []
    for pt in points:
        rows.append(BenchmarkRow(pt.w2, "smdp", w1 * pt.w_bar + pt.w2 * pt.p_bar, pt.w_bar, pt.p_bar,
                                 math.isfinite(pt.w_bar)))
        for pid, rep in bench.items():
            if rep is None:
                rows.append(BenchmarkRow(pt.w2, pid, math.inf, math.inf, math.nan, False))
            else:
                rows.append(BenchmarkRow(pt.w2, pid, w1 * rep.w_bar + pt.w2 * rep.p_bar, rep.w_bar, rep.p_bar, True))
    for pt in points:
        smdp = next(r for r in rows if r.w2 == pt.w2 and r.policy_id == "smdp")
        for r in rows:
            if r.w2 == pt.w2 and r.policy_id != "smdp" and smdp.gain > r.gain + epsilon:
                log.warning("w2=%g: SMDP cost %.6g exceeds %s cost %.6g", pt.w2, smdp.gain, r.policy_id, r.gain)
    return rows


# ---------------------------------------------------------------------------
# SLO-driven weight selection.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanBound:
    bound_ms: float

    def ok(self, pt: TradeoffPoint) -> bool:
        return pt.w_bar <= self.bound_ms

    def miss(self, pt: TradeoffPoint) -> float:
        return pt.w_bar - self.bound_ms


@dataclass(frozen=True)
class PercentileBound:
    q: float
    bound_ms: float

    def ok(self, pt: TradeoffPoint) -> bool:
        return _sim(pt).percentile(self.q) <= self.bound_ms

    def miss(self, pt: TradeoffPoint) -> float:
        return _sim(pt).percentile(self.q) - self.bound_ms


@dataclass(frozen=True)
class SatisfactionBound:
    fraction: float
    bound_ms: float

    def ok(self, pt: TradeoffPoint) -> bool:
        return _sim(pt).slo_satisfaction(self.bound_ms) >= self.fraction

    def miss(self, pt: TradeoffPoint) -> float:
        return self.fraction - _sim(pt).slo_satisfaction(self.bound_ms)


def _sim(pt: TradeoffPoint) -> SimStats:
    if pt.sim is None:
        raise ValueError("percentile constraints need simulated points; run attach_simulations first")
    return pt.sim


class InfeasibleSlo(ValueError):
    def __init__(self, message: str, closest: TradeoffPoint | None):
        super().__init__(message)
        self.closest = closest


def attach_simulations(config: SystemConfig, points: Sequence[TradeoffPoint], n_requests: int, seed: int = 0,
                       warmup_fraction: float = 0.05) -> None:
    for pt in points:
        if pt.policy is not None and is_stabilizing(pt.policy, config):
            pt.sim = simulate(config, pt.policy, n_requests, warmup_fraction, seed)


def select_weight_for_slo(points: Sequence[TradeoffPoint], constraint) -> TradeoffPoint:
    """Largest w2 whose solution meets ``constraint``."""
    usable = [p for p in points if math.isfinite(p.w_bar) and p.policy is not None]
    feasible = [p for p in usable if constraint.ok(p)]
    if not feasible:
        closest = min(usable, key=constraint.miss, default=None)
        raise InfeasibleSlo(f"no sweep point satisfies {constraint}", closest)
    return max(feasible, key=lambda p: p.w2)


# ---------------------------------------------------------------------------
# Truncation study.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationRow:
    c_o: float
    s_max: int
    gain: float
    delta: float
    iterations: int
    converged: bool
    accepted: bool

    CSV_HEADER = ("c_o", "s_max", "gain", "delta", "iterations", "converged", "accepted")

    def csv_row(self, fmt=repr) -> list:
        return [fmt(self.c_o), self.s_max, fmt(self.gain), fmt(self.delta), self.iterations, int(self.converged),
                int(self.accepted)]


def truncation_point(config: SystemConfig, weights: Weights, c_o: float, s_max: int,
                     delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON,
                     iter_max: int = DEFAULT_ITER_MAX) -> TruncationRow:
    sol = solve(config, weights, s_max, c_o, delta, epsilon, iter_max)
    return TruncationRow(float(c_o), s_max, sol.report.gain, sol.report.delta, sol.rvi.iterations,
                         sol.rvi.converged, sol.report.accepted)


def truncation_study(config: SystemConfig, weights: Weights, c_o_grid: Iterable[float], s_max_grid: Iterable[int],
                     delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON,
                     iter_max: int = DEFAULT_ITER_MAX) -> list[TruncationRow]:
    return [truncation_point(config, weights, c, s, delta, epsilon, iter_max)
            for c in c_o_grid for s in s_max_grid]


def min_accepted_s_max(config: SystemConfig, weights: Weights, c_o: float, delta: float = DEFAULT_DELTA,
                       epsilon: float = DEFAULT_EPSILON, iter_max: int = DEFAULT_ITER_MAX, step: int = 16,
                       cap: int = 2048) -> tuple[TruncationRow, list[TruncationRow]]:
    """Smallest accepted s_max: scan upward in ``step`` increments, then
    bisect inside the first bracket. Assumes acceptance is monotone in s_max
    within one step."""
    rows = []

    def run(s):
        row = truncation_point(config, weights, c_o, s, delta, epsilon, iter_max)
        rows.append(row)
        return row

    lo, s = None, config.b_max
    while s <= cap:
        row = run(s)
        if row.accepted:
            break
        lo, s = s, s + step
    else:
        raise TruncationError(f"no accepted s_max <= {cap} for c_o={c_o}")
    best = row
    hi = s
    while lo is not None and hi - lo > 1:
        mid = (lo + hi) // 2
        r = run(mid)
        if r.accepted:
            hi, best = mid, r
        else:
            lo = mid
    return best, rows


# ---------------------------------------------------------------------------
# Output helpers.
# ---------------------------------------------------------------------------


def config_hash(config: SystemConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    parameters: dict
    config: dict | None = None
    seeds: list[int] = field(default_factory=list)
    tool_version: str = __version__
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str | None = None

    @property
    def config_hash(self) -> str | None:
        if self.config is None:
            return None
        return hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).hexdigest()[:16]

    def write(self, out_dir: str | Path, name: str = "manifest.json") -> Path:
        self.finished = datetime.now(timezone.utc).isoformat()
        path = Path(out_dir) / name
        payload = {
            "tool_version": self.tool_version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "command": self.command,
            "parameters": self.parameters,
            "config": self.config,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "started": self.started,
            "finished": self.finished,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
        return path


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
