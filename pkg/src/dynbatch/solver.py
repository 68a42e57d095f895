"""Relative value iteration for the discretised average-cost MDP."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp_transform import DiscreteMdp

DEFAULT_EPSILON = 0.01
DEFAULT_ITER_MAX = 10_000


@dataclass(frozen=True)
class RviResult:
    policy_table: np.ndarray  # action per state, overflow state last
    values: np.ndarray  # relative values H, zero at the reference state
    gain: float  # diagnostic midpoint of the last Bellman differences
    iterations: int
    converged: bool
    final_span: float
    spans: np.ndarray  # span(H_{i+1} - H_i) for every iteration


def span(h: np.ndarray) -> float:
    return float(np.max(h) - np.min(h))


def bellman_apply(mdp: DiscreteMdp, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One application of the Bellman operator.

    Returns ``(J, argmin_actions)``; ties go to the smallest action because
    the stacked rows are ordered by (state, action).
    """
    q = mdp.cost + mdp.kernel @ h
    n = mdp.n_states
    j = np.full(n, np.inf)
    np.minimum.at(j, mdp.states, q)
    # first row (smallest action) attaining the minimum in each state
    hit = q <= j[mdp.states]
    best = np.full(n, -1)
    for k in np.flatnonzero(hit)[::-1]:
        best[mdp.states[k]] = mdp.actions[k]
    return j, best


def _bellman_fast(mdp: DiscreteMdp, h: np.ndarray, starts: np.ndarray) -> np.ndarray:
    q = mdp.cost + mdp.kernel @ h
    return np.minimum.reduceat(q, starts)


def relative_value_iteration(
    mdp: DiscreteMdp,
    epsilon: float = DEFAULT_EPSILON,
    iter_max: int = DEFAULT_ITER_MAX,
    s_star: int = 0,
) -> RviResult:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if iter_max < 1:
        raise ValueError("iter_max must be >= 1")
    # rows are grouped by state in ascending order
    starts = np.flatnonzero(np.r_[True, np.diff(mdp.states) != 0])
    h = np.zeros(mdp.n_states)
    spans = []
    converged = False
    i = 0
    while i < iter_max:
        j = _bellman_fast(mdp, h, starts)
        h_next = j - j[s_star]
        i += 1
        sp = span(h_next - h)
        spans.append(sp)
        if sp < epsilon:
            converged = True
            break
        h = h_next
    j, policy = bellman_apply(mdp, h)
    diff = j - h
    gain = 0.5 * (float(np.max(diff)) + float(np.min(diff)))
    values = j - j[s_star]
    return RviResult(policy, values, gain, i, converged, spans[-1], np.array(spans))


def write_policy_csv(path: str | Path, table: np.ndarray, header: str | None = None) -> None:
    n = len(table)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["state", "action"])
        for s, a in enumerate(table):
            w.writerow(["overflow" if s == n - 1 else s, int(a)])


def read_policy_csv(path: str | Path) -> tuple[np.ndarray, str | None]:
    header = None
    actions = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("#"):
        header = lines[0][1:].strip()
        lines = lines[1:]
    rows = list(csv.reader(lines))
    for state, action in rows[1:]:
        actions.append(int(action))
    return np.array(actions), header
