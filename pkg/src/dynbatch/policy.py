"""Stationary deterministic batching policies and the closed-form control limit
for exponential, size-independent service."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .queue_model import ConfigError, Exponential, SystemConfig, Weights


class SolverError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Static:
    """Wait until ``b`` requests are present, then serve exactly ``b``."""

    b: int

    @property
    def id(self) -> str:
        return f"static-{self.b}"

    def action(self, s: int, config: SystemConfig) -> int:
        return 0 if s < self.b else self.b

    def check(self, config: SystemConfig) -> None:
        if not config.b_min <= self.b <= config.b_max:
            raise ConfigError(f"static batch size {self.b} outside [{config.b_min}, {config.b_max}]")


@dataclass(frozen=True)
class Greedy:
    """Serve the largest available batch.

    An empty system always waits. With ``strict=False`` the server starts a
    batch of ``b_min`` even when fewer requests are present, which is
    infeasible for ``b_min > 1``. ``strict=None`` picks strict mode exactly
    when ``b_min > 1``.
    """

    strict: bool | None = None

    @property
    def id(self) -> str:
        return "greedy"

    def action(self, s: int, config: SystemConfig) -> int:
        strict = config.b_min > 1 if self.strict is None else self.strict
        if s == 0 or (strict and s < config.b_min):
            return 0
        return max(min(s, config.b_max), config.b_min)

    def check(self, config: SystemConfig) -> None:
        if self.strict is False and config.b_min > 1:
            raise ConfigError("non-strict greedy serves undersized batches when b_min > 1")


@dataclass(frozen=True)
class ControlLimit:
    q: int

    @property
    def id(self) -> str:
        return f"control-limit-{self.q}"

    def action(self, s: int, config: SystemConfig) -> int:
        return 0 if s < self.q else min(s, config.b_max)

    def check(self, config: SystemConfig) -> None:
        if self.q < 1:
            raise ConfigError("control limit must be >= 1")
        if config.b_min != 1:
            raise ConfigError("control-limit policies require b_min = 1")


@dataclass(frozen=True)
class Table:
    """Solved policy over states 0..s_max plus the overflow entry.

    States beyond ``s_max`` reuse the action chosen at ``s_max``.
    """

    actions: tuple[int, ...]
    label: str = "smdp"

    @property
    def s_max(self) -> int:
        return len(self.actions) - 2

    @property
    def id(self) -> str:
        return self.label

    def action(self, s: int, config: SystemConfig) -> int:
        return int(self.actions[min(s, self.s_max)])

    def check(self, config: SystemConfig) -> None:
        for s, a in enumerate(self.actions[:-1]):
            if a != 0 and not (config.b_min <= a <= min(s, config.b_max)):
                raise ConfigError(f"table action {a} infeasible at state {s}")

    @classmethod
    def from_array(cls, arr, label: str = "smdp") -> "Table":
        return cls(tuple(int(a) for a in arr), label)


Policy = Static | Greedy | ControlLimit | Table


def action(policy: Policy, s: int, config: SystemConfig) -> int:
    if s < 0:
        raise ConfigError("state must be >= 0")
    return policy.action(s, config)


def policy_vector(policy: Policy, config: SystemConfig, s_max: int) -> np.ndarray:
    """Actions for states 0..s_max and the overflow state (acting as s_max)."""
    if isinstance(policy, Table) and policy.s_max == s_max:
        return np.array(policy.actions, dtype=int)
    acts = [policy.action(s, config) for s in range(s_max + 1)]
    return np.array(acts + [acts[-1]], dtype=int)


def tail_action(policy: Policy, config: SystemConfig) -> int:
    return policy.action(10 * config.b_max + (policy.s_max if isinstance(policy, Table) else 0), config)


def is_stabilizing(policy: Policy, config: SystemConfig) -> bool:
    """True if the batch served at large queue lengths drains faster than arrivals."""
    a = tail_action(policy, config)
    return a > 0 and config.lam * config.latency(a) < a


def is_control_limit(table, config: SystemConfig) -> int | None:
    """Threshold Q if states 0..s_max of ``table`` follow a control-limit
    policy, else None. The overflow entry is not part of the infinite-state
    policy and is ignored."""
    body = [int(a) for a in list(table)[:-1]]
    q = next((s for s, a in enumerate(body) if a != 0), None)
    if q is None or q < 1:
        return None
    expected = [0 if s < q else min(s, config.b_max) for s in range(len(body))]
    return q if body == expected else None


# ---------------------------------------------------------------------------
# Closed-form optimal control limit (exponential, size-independent service).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlLimitAnalysis:
    psi: float
    xi: float
    chi: float
    r: float
    d_q: tuple[float, ...]  # D_1 .. D_{b_max}
    optimal_q: int


def solve_xi(psi: float, b_max: int) -> float:
    """Root in (0, 1) of (1 - psi) x**(b_max + 1) - x + psi."""
    if not 0.0 < psi < 1.0:
        raise SolverError(f"psi must lie in (0, 1), got {psi}")

    def f(x):
        return (1.0 - psi) * x ** (b_max + 1) - x + psi

    # f(psi) > 0 and f(1) = 0; a root below 1 exists iff f dips negative near 1
    hi = None
    for gap in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10):
        if 1.0 - gap > psi and f(1.0 - gap) < 0:
            hi = 1.0 - gap
            break
    if hi is None:
        raise SolverError(f"no root of the control-limit polynomial in (0, 1) for psi={psi}, b_max={b_max}")
    return float(brentq(f, psi, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def check_assumptions(config: SystemConfig, need_exponential: bool = True) -> None:
    failed = []
    lats = [config.latency(b) for b in config.batch_sizes]
    if max(lats) - min(lats) > 1e-12 * max(lats):
        failed.append("service time must not depend on batch size")
    if config.b_min != 1:
        failed.append("b_min must be 1")
    if config.energy.form not in ("affine", "constant"):
        failed.append("energy must be affine in b")
    elif config.energy.form == "affine" and config.energy.slope <= 0:
        failed.append("energy slope must be positive")
    if need_exponential and not isinstance(config.dist, Exponential):
        failed.append("service time must be exponential")
    if failed:
        raise ConfigError("closed-form control limit preconditions violated: " + "; ".join(failed))


def closed_form_Q(config: SystemConfig, weights: Weights) -> ControlLimitAnalysis:
    check_assumptions(config)
    lam, bmax = config.lam, config.b_max
    mu = 1.0 / config.latency(1)
    zeta0 = config.energy.intercept
    chi = lam / mu
    psi = lam / (lam + mu)
    xi = solve_xi(psi, bmax)
    r = xi / (1.0 - xi)
    fixed = weights.w2 * zeta0 * lam**2 / weights.w1
    d = []
    for q in range(1, bmax + 1):
        d.append(q * (0.5 * (q + 1) + chi - r) - r * r * xi**q + r * (r - chi) - fixed)
    q_opt = next((q for q, dq in enumerate(d, start=1) if dq >= 0), bmax)
    return ControlLimitAnalysis(psi, xi, chi, r, tuple(d), q_opt)


def linear_search_Q(config: SystemConfig, weights: Weights, s_max: int, c_o: float | None = None) -> int:
    """Threshold minimising the evaluated average cost over Q = 1..b_max."""
    from .evaluator import evaluate
    from .smdp import build_truncated

    if config.b_min != 1:
        raise ConfigError("linear search over control limits requires b_min = 1")
    model = build_truncated(config, weights, s_max, c_o)
    gains = [evaluate(model, ControlLimit(q)).gain for q in range(1, config.b_max + 1)]
    return int(np.argmin(gains)) + 1
