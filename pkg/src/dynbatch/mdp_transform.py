"""Uniformisation of the truncated SMDP into a discrete-time average-cost MDP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .queue_model import ConfigError, mean_service_time
from .smdp import TruncatedSmdp

DEFAULT_SAFETY = 0.99


@dataclass(frozen=True, eq=False)
class DiscreteMdp:
    """Stacked representation: one kernel row and one cost per feasible pair.

    ``states[k]``/``actions[k]`` identify row ``k`` of ``kernel`` and ``cost``.
    """

    model: TruncatedSmdp
    states: np.ndarray
    actions: np.ndarray
    kernel: np.ndarray
    cost: np.ndarray  # cost per unit time, c_hat / y
    eta_disc: float

    @property
    def n_states(self) -> int:
        return self.model.n_states


def analytic_bound(model: TruncatedSmdp) -> float:
    """The closed-form upper limit on eta_disc built from 1/lam and the pmfs."""
    cfg = model.config
    terms = [1.0 / cfg.lam]
    for a in cfg.batch_sizes:
        lat = mean_service_time(cfg, a)
        p = model.pmf[a]
        if 1.0 - p[a] > 0:
            terms.append(lat / (1.0 - p[a]))
        head = float(p[: a + 1].sum())
        if head > 0:
            terms.append(lat / head)
    return min(terms)


def discretization_bound(model: TruncatedSmdp) -> float:
    """min over feasible (s, a) with m(s|s,a) < 1 of y(s,a) / (1 - m(s|s,a)),
    computed directly from the built kernel."""
    states, actions, kernel = model.stacked
    stay = kernel[np.arange(len(states)), states]
    y = model.sojourn[states, actions]
    leave = 1.0 - stay
    mask = leave > 0
    return float(np.min(y[mask] / leave[mask]))


def discretize(model: TruncatedSmdp, safety: float = DEFAULT_SAFETY) -> DiscreteMdp:
    if not 0.0 < safety < 1.0:
        raise ConfigError(f"safety must lie in (0, 1), got {safety}")
    eta = safety * discretization_bound(model)
    states, actions, kernel = model.stacked
    y = model.sojourn[states, actions]
    scaled = eta * kernel / y[:, None]
    rows = np.arange(len(states))
    scaled[rows, states] = 1.0 + eta * (kernel[rows, states] - 1.0) / y
    cost = model.cost[states, actions] / y
    scaled.setflags(write=False)
    cost.setflags(write=False)
    return DiscreteMdp(model, states, actions, scaled, cost, eta)
