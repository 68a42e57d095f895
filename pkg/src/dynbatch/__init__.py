"""Optimal dynamic batching for a batch-service queue with size-dependent
service times, solved as a semi-Markov decision process."""

__version__ = "0.1.0"

from .evaluator import EvalReport, Solution, auto_truncate, evaluate, solve
from .policy import ControlLimit, Greedy, Static, Table, closed_form_Q, linear_search_Q
from .queue_model import (
    BatchFunction,
    Deterministic,
    Erlang,
    Exponential,
    Hyperexponential,
    SystemConfig,
    Weights,
    basic_scenario,
    load_config,
)
from .simulator import SimStats, simulate
from .smdp import build_truncated

__all__ = [
    "BatchFunction",
    "ControlLimit",
    "Deterministic",
    "Erlang",
    "EvalReport",
    "Exponential",
    "Greedy",
    "Hyperexponential",
    "SimStats",
    "Solution",
    "Static",
    "SystemConfig",
    "Table",
    "Weights",
    "auto_truncate",
    "basic_scenario",
    "build_truncated",
    "closed_form_Q",
    "evaluate",
    "linear_search_Q",
    "load_config",
    "simulate",
    "solve",
]
