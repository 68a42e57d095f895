"""Finite-state SMDP obtained by aggregating all states above ``s_max`` into
a single overflow state.

State indices run 0..s_max, and ``s_max + 1`` is the overflow state. The
overflow state behaves as if it held ``s_max`` requests, can never be left by
waiting, and pays an extra abstract cost ``c_o`` per millisecond of sojourn.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .queue_model import (
    ConfigError,
    SystemConfig,
    Weights,
    arrival_count_pmf,
    mean_service_time,
    second_moment,
)

DEFAULT_C_O = 100.0


def resolve_c_o(c_o: float | None, weights: Weights) -> float:
    """``None`` means 100 cost units per ms, scaled up with the power weight so
    that idling in the overflow state never undercuts serving."""
    if c_o is None:
        return DEFAULT_C_O * max(1.0, weights.w2 / weights.w1)
    return float(c_o)


def step_cost(config: SystemConfig, weights: Weights | tuple[float, float], s: int, a: int) -> float:
    """Expected cost accrued between two decision epochs.

    Waiting costs ``w1*s/lam**2``; serving ``a`` costs its weighted energy plus
    the holding cost integrated over the service time.
    """
    w1, w2 = (weights.w1, weights.w2) if isinstance(weights, Weights) else weights
    if s < 0:
        raise ConfigError(f"state must be >= 0, got {s}")
    if a == 0:
        return w1 * s / config.lam**2
    if a > s or not config.b_min <= a <= config.b_max:
        raise ConfigError(f"action {a} infeasible at state {s}")
    lat = mean_service_time(config, a)
    return w2 * config.energy(a) + w1 * (s * lat / config.lam + 0.5 * second_moment(config, a))


@dataclass(frozen=True, eq=False)
class TruncatedSmdp:
    config: SystemConfig
    weights: Weights
    s_max: int
    c_o: float
    pmf: dict[int, np.ndarray]
    holding: np.ndarray  # (n_states, n_actions), w1 = 1, no abstract cost
    energy: np.ndarray  # (n_states, n_actions), batch energy in mJ
    sojourn: np.ndarray  # (n_states, n_actions), ms
    feasible: np.ndarray  # (n_states, n_actions) bool

    @property
    def n_states(self) -> int:
        return self.s_max + 2

    @property
    def overflow(self) -> int:
        return self.s_max + 1

    @property
    def n_actions(self) -> int:
        return self.config.b_max + 1

    def occupancy(self, s: int) -> int:
        return self.s_max if s == self.overflow else s

    @cached_property
    def abstract(self) -> np.ndarray:
        out = np.zeros_like(self.sojourn)
        out[self.overflow] = self.c_o * self.sojourn[self.overflow]
        return out

    @cached_property
    def cost(self) -> np.ndarray:
        """Weighted cost c_hat(s, a); +inf where infeasible."""
        c = self.weights.w1 * self.holding + self.weights.w2 * self.energy + self.abstract
        return np.where(self.feasible, c, np.inf)

    def row(self, s: int, a: int) -> np.ndarray:
        """Transition probabilities out of (s, a) over all n_states states."""
        if not self.feasible[s, a]:
            raise ConfigError(f"action {a} infeasible at state {s}")
        out = np.zeros(self.n_states)
        occ = self.occupancy(s)
        if a == 0:
            out[s + 1 if s < self.s_max else self.overflow] = 1.0
            return out
        base = occ - a
        p = self.pmf[a]
        out[base : self.s_max + 1] = p[: self.s_max + 1 - base]
        out[self.overflow] = max(0.0, 1.0 - out[: self.overflow].sum())
        return out

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(s), int(a)) for s, a in zip(*np.nonzero(self.feasible))]

    @cached_property
    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(states, actions, kernel) for every feasible pair, row-stacked."""
        pairs = self.pairs()
        states = np.array([p[0] for p in pairs])
        actions = np.array([p[1] for p in pairs])
        kernel = np.vstack([self.row(s, a) for s, a in pairs])
        kernel.setflags(write=False)
        return states, actions, kernel

    def dump_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "action", "next_state", "probability", "cost", "sojourn_ms"])
            for s, a in self.pairs():
                for j, p in enumerate(self.row(s, a)):
                    if p > 0:
                        label = "overflow" if j == self.overflow else j
                        w.writerow([s if s != self.overflow else "overflow", a, label, repr(p),
                                    repr(self.cost[s, a]), repr(self.sojourn[s, a])])


def feasible_actions(model: TruncatedSmdp | SystemConfig, s: int, s_max: int | None = None) -> list[int]:
    """``{0} U [b_min, min(s, b_max)]``; the overflow state counts as s_max."""
    if isinstance(model, TruncatedSmdp):
        config, s = model.config, model.occupancy(s)
    else:
        config = model
        if s_max is not None and s > s_max:
            s = s_max
    return [0] + list(range(config.b_min, min(s, config.b_max) + 1))


def build_truncated(config: SystemConfig, weights: Weights, s_max: int, c_o: float | None = None) -> TruncatedSmdp:
    c_o = resolve_c_o(c_o, weights)
    if s_max < config.b_max:
        raise ConfigError(f"s_max = {s_max} must be >= b_max = {config.b_max}")
    if c_o < 0:
        raise ConfigError("abstract cost c_o must be >= 0")
    n, na = s_max + 2, config.b_max + 1
    k_max = s_max + config.b_max
    pmf = {}
    for a in config.batch_sizes:
        p = arrival_count_pmf(config, a, k_max).probs
        p.setflags(write=False)
        pmf[a] = p
    feasible = np.zeros((n, na), dtype=bool)
    holding = np.zeros((n, na))
    energy = np.zeros((n, na))
    sojourn = np.zeros((n, na))
    lam = config.lam
    for s in range(n):
        occ = min(s, s_max)
        for a in feasible_actions(config, occ):
            feasible[s, a] = True
            if a == 0:
                sojourn[s, a] = 1.0 / lam
                holding[s, a] = occ / lam**2
            else:
                sojourn[s, a] = mean_service_time(config, a)
                holding[s, a] = step_cost(config, (1.0, 0.0), occ, a)
                energy[s, a] = config.energy(a)
    for arr in (feasible, holding, energy, sojourn):
        arr.setflags(write=False)
    return TruncatedSmdp(config, weights, s_max, float(c_o), pmf, holding, energy, sojourn, feasible)
