"""Exact evaluation of a fixed policy on the truncated SMDP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .mdp_transform import DEFAULT_SAFETY, discretize
from .policy import Policy, Table, policy_vector
from .queue_model import ConfigError, SystemConfig, Weights
from .smdp import TruncatedSmdp, build_truncated
from .solver import DEFAULT_EPSILON, DEFAULT_ITER_MAX, RviResult, relative_value_iteration

DEFAULT_DELTA = 1e-3


class NumericalError(ArithmeticError):
    pass


class TruncationError(NumericalError):
    pass


@dataclass(frozen=True)
class InducedChain:
    actions: np.ndarray
    transition: np.ndarray
    cost: np.ndarray
    sojourn: np.ndarray
    energy: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    gain: float
    delta: float
    stationary: np.ndarray
    w_bar: float
    p_bar: float
    l_bar: float
    accepted: bool
    s_max: int
    c_o: float
    weights: Weights
    policy_id: str = ""
    n_classes: int = 1

    CSV_HEADER = ("policy", "s_max", "c_o", "w1", "w2", "gain", "delta", "w_bar_ms", "p_bar_W", "accepted")

    def csv_row(self, fmt=repr) -> list:
        return [self.policy_id, self.s_max, fmt(self.c_o), fmt(self.weights.w1), fmt(self.weights.w2),
                fmt(self.gain), fmt(self.delta), fmt(self.w_bar), fmt(self.p_bar), int(self.accepted)]


def induced_chain(model: TruncatedSmdp, policy: Policy | np.ndarray) -> InducedChain:
    if isinstance(policy, np.ndarray):
        acts = policy.astype(int)
    else:
        policy.check(model.config)
        acts = policy_vector(policy, model.config, model.s_max)
    if len(acts) != model.n_states:
        raise ConfigError(f"policy has {len(acts)} entries, model has {model.n_states} states")
    states = np.arange(model.n_states)
    bad = [int(s) for s in states if not model.feasible[s, acts[s]]]
    if bad:
        raise ConfigError(f"policy infeasible at states {bad[:10]}")
    transition = np.vstack([model.row(s, a) for s, a in zip(states, acts)])
    return InducedChain(acts, transition, model.cost[states, acts], model.sojourn[states, acts],
                        model.energy[states, acts])


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Solve mu P = mu, sum(mu) = 1 with one balance equation replaced."""
    n = transition.shape[0]
    a = transition.T - np.eye(n)
    a[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        mu = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"stationary system is singular: {exc}") from None
    if not np.all(np.isfinite(mu)) or np.min(mu) < -1e-6:
        raise NumericalError(f"stationary solve unstable: min entry {np.min(mu):.3e}")
    # transient states can come out as tiny negatives; clip and check balance
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = float(np.abs(mu @ transition - mu).sum())
    if residual > 1e-8:
        raise NumericalError(f"stationary solve unstable: balance residual {residual:.3e}")
    return mu


def power_iteration(transition: np.ndarray, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary vector by repeated multiplication with a lazy chain."""
    n = transition.shape[0]
    lazy = 0.5 * (transition + np.eye(n))
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = mu @ lazy
        if np.abs(nxt - mu).sum() < tol:
            return nxt / nxt.sum()
        mu = nxt
    raise NumericalError("power iteration did not converge")


def reachable(transition: np.ndarray, start: int) -> set[int]:
    seen, stack = {start}, [start]
    while stack:
        s = stack.pop()
        for j in np.flatnonzero(transition[s] > 0):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return seen


def recurrent_classes(transition: np.ndarray) -> list[np.ndarray]:
    """Closed communicating classes of the chain, as sorted index arrays."""
    graph = sparse.csr_matrix(transition > 0)
    n_comp, labels = csgraph.connected_components(graph, directed=True, connection="strong")
    out = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        leaves = graph[members].indices
        if np.all(labels[leaves] == c):
            out.append(members)
    return out


def absorption_probabilities(transition: np.ndarray, classes: list[np.ndarray], start: int) -> np.ndarray:
    """Probability that the chain started in ``start`` ends in each class."""
    for k, members in enumerate(classes):
        if start in members:
            out = np.zeros(len(classes))
            out[k] = 1.0
            return out
    closed = np.concatenate(classes)
    transient = np.setdiff1d(np.arange(transition.shape[0]), closed)
    q = transition[np.ix_(transient, transient)]
    r = np.column_stack([transition[np.ix_(transient, m)].sum(axis=1) for m in classes])
    h = np.linalg.solve(np.eye(len(transient)) - q, r)
    row = h[np.searchsorted(transient, start)]
    return row / row.sum()


def evaluate(model: TruncatedSmdp, policy: Policy | np.ndarray, delta: float = DEFAULT_DELTA) -> EvalReport:
    """Long-run averages of a fixed policy started from the empty system.

    Balance equations are solved on the closed class only, so long transient
    stretches (unconverged policies near the truncation level) do not spoil
    the conditioning. With several closed classes the per-class averages are
    weighted by the probability of ending up in each class from state 0.
    """
    if not delta > 0:
        raise ConfigError("delta must be positive")
    chain = induced_chain(model, policy)
    classes = recurrent_classes(chain.transition)
    weights = absorption_probabilities(chain.transition, classes, 0) if len(classes) > 1 else np.ones(1)
    so = model.overflow
    mu = np.zeros(model.n_states)
    gain = overflow_share = p_bar = 0.0
    for members, weight in zip(classes, weights):
        if weight == 0.0:
            continue
        sub = stationary_distribution(chain.transition[np.ix_(members, members)])
        time = float(sub @ chain.sojourn[members])
        gain += weight * float(sub @ chain.cost[members]) / time
        p_bar += weight * float(sub @ chain.energy[members]) / time
        if so in members:
            k = int(np.searchsorted(members, so))
            overflow_share += weight * float(sub[k] * chain.cost[so]) / time
        mu[members] += weight * sub
    w = model.weights
    w_bar = (gain - w.w2 * p_bar) / w.w1
    pid = "" if isinstance(policy, np.ndarray) else policy.id
    return EvalReport(gain, overflow_share, mu, w_bar, p_bar, model.config.lam * w_bar,
                      overflow_share < delta, model.s_max, model.c_o, w, pid, len(classes))


@dataclass(frozen=True)
class Solution:
    s_max: int
    model: TruncatedSmdp
    rvi: RviResult
    report: EvalReport
    history: list[tuple[int, float, bool, int]] = field(default_factory=list)  # (s_max, delta, converged, iters)

    @property
    def policy(self) -> Table:
        return Table.from_array(self.rvi.policy_table)


def solve(config: SystemConfig, weights: Weights, s_max: int, c_o: float | None = None,
          delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON,
          iter_max: int = DEFAULT_ITER_MAX, safety: float = DEFAULT_SAFETY) -> Solution:
    """Build, discretise, run RVI and evaluate at a fixed truncation level."""
    model = build_truncated(config, weights, s_max, c_o)
    rvi = relative_value_iteration(discretize(model, safety), epsilon, iter_max)
    report = evaluate(model, Table.from_array(rvi.policy_table), delta)
    return Solution(s_max, model, rvi, report, [(s_max, report.delta, rvi.converged, rvi.iterations)])


def auto_truncate(config: SystemConfig, weights: Weights, c_o: float | None = None,
                  delta: float = DEFAULT_DELTA, epsilon: float = DEFAULT_EPSILON,
                  iter_max: int = DEFAULT_ITER_MAX, start: int | None = None,
                  growth: float = 1.5, cap: int = 4096, safety: float = DEFAULT_SAFETY) -> Solution:
    """Grow s_max geometrically from ``start`` (default b_max) until the
    overflow share of the solved policy falls below ``delta``."""
    s_max = max(start or config.b_max, config.b_max)
    history = []
    while s_max <= cap:
        sol = solve(config, weights, s_max, c_o, delta, epsilon, iter_max, safety)
        history.append(sol.history[0])
        if sol.report.accepted:
            return Solution(sol.s_max, sol.model, sol.rvi, sol.report, history)
        s_max = max(s_max + 1, math.ceil(s_max * growth))
    raise TruncationError(f"no s_max <= {cap} met overflow tolerance {delta}; history={history}")
