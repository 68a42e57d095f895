"""Discrete-event simulation of the batch-service queue under a fixed policy.

Decision epochs are service completions and arrivals to an idle server.
Requests are served first-come first-served. Arrival and service-time draws
come from independent child streams of one seed, so changing the policy does
not change the arrival sample path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .policy import Policy, Table
from .queue_model import ConfigError, SystemConfig

DEFAULT_WARMUP = 0.05
DEFAULT_QUANTILES = (0.5, 0.9, 0.95, 0.99)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimStats:
    n_requests: int
    w_bar: float
    p_bar: float
    l_bar: float
    percentiles: dict[float, float]
    seed: int
    samples: np.ndarray = field(repr=False)  # sorted response times (ms)
    w_stderr: float = math.nan
    n_batches: int = 0
    mean_batch: float = math.nan
    departures: np.ndarray | None = field(default=None, repr=False)
    arrivals: np.ndarray | None = field(default=None, repr=False)
    batch_of: np.ndarray | None = field(default=None, repr=False)

    CSV_HEADER = ("n_requests", "seed", "w_bar_ms", "p_bar_W", "l_bar", "mean_batch", "p50_ms", "p90_ms",
                  "p95_ms", "p99_ms")

    def slo_satisfaction(self, bound_ms: float) -> float:
        """Fraction of measured requests with response time <= bound_ms."""
        return float(np.searchsorted(self.samples, bound_ms, side="right")) / len(self.samples)

    def percentile(self, q: float) -> float:
        return percentile(self.samples, q, presorted=True)

    def histogram(self, bin_ms: float) -> tuple[np.ndarray, np.ndarray]:
        edges = np.arange(0.0, self.samples[-1] + bin_ms, bin_ms)
        counts, edges = np.histogram(self.samples, bins=edges)
        return edges[:-1], counts

    def csv_row(self, fmt=repr) -> list:
        p = [self.percentile(q) for q in (0.5, 0.9, 0.95, 0.99)]
        return [self.n_requests, self.seed, fmt(self.w_bar), fmt(self.p_bar), fmt(self.l_bar),
                fmt(self.mean_batch), *map(fmt, p)]


def percentile(samples: Sequence[float] | np.ndarray, q: float, presorted: bool = False) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest sample."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"quantile must lie in (0, 1], got {q}")
    if not presorted:
        x = np.sort(x)
    rank = max(1, math.ceil(q * x.size - 1e-9))
    return float(x[rank - 1])


def _action_lookup(policy: Policy, config: SystemConfig) -> list[int]:
    n = max(config.b_max, policy.s_max if isinstance(policy, Table) else 0) + 2
    return [policy.action(s, config) for s in range(n)]


def simulate(
    config: SystemConfig,
    policy: Policy,
    n_requests: int,
    warmup_fraction: float = DEFAULT_WARMUP,
    seed: int = 0,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    keep_trace: bool = False,
) -> SimStats:
    if n_requests < 1:
        raise ConfigError("n_requests must be >= 1")
    if not 0.0 <= warmup_fraction < 0.5:
        raise ConfigError("warmup_fraction must lie in [0, 0.5)")
    table = _action_lookup(policy, config)
    tail = len(table) - 1
    lat = {b: config.latency(b) for b in config.batch_sizes}
    en = {b: config.energy(b) for b in config.batch_sizes}

    arr_rng, svc_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    pad = 2 * config.b_max + 16
    chunk = n_requests + pad

    def more_arrivals(start: float, n: int) -> np.ndarray:
        return start + np.cumsum(arr_rng.exponential(1.0 / config.lam, n))

    arrivals = more_arrivals(0.0, chunk).tolist()
    svc_block = 4096
    unit = config.dist.sample_unit(svc_rng, svc_block).tolist()
    svc_i = 0

    departures = [0.0] * n_requests
    batch_of = [0] * n_requests if keep_trace else None
    starts: list[float] = []
    energies: list[float] = []
    t = 0.0
    head = 0  # oldest request still in the system
    nxt = 0  # next request not yet arrived
    n_arr = len(arrivals)
    while head < n_requests:
        while nxt < n_arr and arrivals[nxt] <= t:
            nxt += 1
        if nxt == n_arr:
            arrivals.extend(more_arrivals(arrivals[-1], chunk).tolist())
            n_arr = len(arrivals)
            continue
        s = nxt - head
        a = table[s if s < tail else tail]
        if a == 0:
            t = arrivals[nxt]
            continue
        if a > s or a < config.b_min or a > config.b_max:
            raise SimulationError(f"policy {policy.id} chose action {a} at state {s} (t={t:.6g} ms)")
        if svc_i == svc_block:
            unit = config.dist.sample_unit(svc_rng, svc_block).tolist()
            svc_i = 0
        done = t + lat[a] * unit[svc_i]
        svc_i += 1
        starts.append(t)
        energies.append(en[a])
        stop = min(head + a, n_requests)
        for k in range(head, stop):
            departures[k] = done
            if batch_of is not None:
                batch_of[k] = a
        head += a
        t = done

    arr = np.asarray(arrivals[:n_requests])
    dep = np.asarray(departures)
    first = int(warmup_fraction * n_requests)
    t0, t1 = arr[first], arr[-1]
    resp = dep[first:] - arr[first:]
    window = t1 - t0
    st = np.asarray(starts)
    in_window = (st >= t0) & (st < t1)
    p_bar = float(np.asarray(energies)[in_window].sum() / window) if window > 0 else math.nan
    # time-average number in system over [t0, t1]
    occupied = np.clip(dep, t0, t1) - np.clip(arr, t0, t1)
    l_bar = float(occupied.sum() / window) if window > 0 else math.nan
    samples = np.sort(resp)
    pct = {float(q): percentile(samples, q, presorted=True) for q in quantiles}
    n_batches = int(in_window.sum())
    return SimStats(
        n_requests=len(resp),
        w_bar=float(resp.mean()),
        p_bar=p_bar,
        l_bar=l_bar,
        percentiles=pct,
        seed=seed,
        samples=samples,
        w_stderr=batch_means_stderr(resp),
        n_batches=n_batches,
        mean_batch=float(len(resp) / n_batches) if n_batches else math.nan,
        departures=dep if keep_trace else None,
        arrivals=arr if keep_trace else None,
        batch_of=np.asarray(batch_of) if keep_trace else None,
    )


def batch_means_stderr(x: np.ndarray, n_batches: int = 30) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    if len(x) < 2 * n_batches:
        return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    size = len(x) // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def write_trace_csv(path: str | Path, stats: SimStats) -> None:
    if stats.departures is None:
        raise ValueError("simulation was run without keep_trace=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arrival_ms", "departure_ms", "batch_size"])
        for a, d, b in zip(stats.arrivals, stats.departures, stats.batch_of):
            w.writerow([repr(float(a)), repr(float(d)), int(b)])


def write_histogram_csv(path: str | Path, stats: SimStats, bin_ms: float = 0.5) -> None:
    left, counts = stats.histogram(bin_ms)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left_ms", "count"])
        for x, c in zip(left, counts):
            w.writerow([repr(float(x)), int(c)])
