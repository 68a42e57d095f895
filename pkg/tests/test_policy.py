import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynbatch.policy import (
    ControlLimit,
    Greedy,
    SolverError,
    Static,
    Table,
    action,
    check_assumptions,
    closed_form_Q,
    is_control_limit,
    is_stabilizing,
    linear_search_Q,
    policy_vector,
    solve_xi,
)
from dynbatch.queue_model import ConfigError, P4_ENERGY, SystemConfig, Weights, basic_scenario

from conftest import constant_latency_case


def test_static_greedy_control_limit_actions(small_config):
    cfg = small_config
    assert [Static(3).action(s, cfg) for s in range(6)] == [0, 0, 0, 3, 3, 3]
    assert [Greedy().action(s, cfg) for s in range(7)] == [0, 1, 2, 3, 4, 4, 4]
    assert [ControlLimit(2).action(s, cfg) for s in range(7)] == [0, 0, 2, 3, 4, 4, 4]
    with pytest.raises(ConfigError):
        action(Greedy(), -1, cfg)
    with pytest.raises(ConfigError):
        Static(5).check(cfg)


def test_greedy_with_minimum_batch():
    base = basic_scenario(0.5, b_max=8)
    cfg = SystemConfig(base.lam, 3, 8, base.latency, base.energy)
    assert [Greedy().action(s, cfg) for s in range(5)] == [0, 0, 0, 3, 4]
    assert Greedy(strict=False).action(1, cfg) == 3
    with pytest.raises(ConfigError):
        Greedy(strict=False).check(cfg)
    with pytest.raises(ConfigError):
        ControlLimit(2).check(cfg)


def test_table_extends_tail(small_config):
    t = Table((0, 1, 2, 3, 4, 4, 4))
    assert t.s_max == 5
    assert t.action(40, small_config) == 4
    np.testing.assert_array_equal(policy_vector(t, small_config, 5), t.actions)
    np.testing.assert_array_equal(policy_vector(t, small_config, 7), [0, 1, 2, 3, 4, 4, 4, 4, 4])
    with pytest.raises(ConfigError):
        Table((0, 2, 2, 2)).check(small_config)


def test_is_control_limit(small_config):
    cfg = small_config
    for q in (1, 2, 4):
        assert is_control_limit(policy_vector(ControlLimit(q), cfg, 10), cfg) == q
    assert is_control_limit(policy_vector(Static(3), cfg, 10), cfg) is None
    assert is_control_limit([0] * 12, cfg) is None
    # the overflow entry is ignored
    assert is_control_limit(list(policy_vector(ControlLimit(2), cfg, 10)[:-1]) + [0], cfg) == 2


def test_is_stabilizing():
    cfg = basic_scenario(0.9)
    assert is_stabilizing(Greedy(), cfg)
    assert is_stabilizing(Static(32), cfg)
    assert not is_stabilizing(Static(8), cfg)
    assert not is_stabilizing(Table((0, 0, 0, 0)), cfg)


@settings(max_examples=50, deadline=None)
@given(psi=st.floats(0.01, 0.6), b_max=st.integers(2, 40))
def test_solve_xi_root(psi, b_max):
    xi = solve_xi(psi, b_max)
    assert psi <= xi < 1
    assert (1 - psi) * xi ** (b_max + 1) - xi + psi == pytest.approx(0.0, abs=1e-12)


def test_solve_xi_errors():
    with pytest.raises(SolverError):
        solve_xi(0.0, 4)
    # with psi >= b_max/(b_max+1) the only root in (0, 1] is 1
    with pytest.raises(SolverError):
        solve_xi(0.9, 4)


def test_closed_form_extremes():
    # batching is free when service time ignores batch size, so only light
    # load makes immediate service optimal for pure latency
    assert closed_form_Q(constant_latency_case(0.1), Weights(1, 0)).optimal_q == 1
    assert closed_form_Q(constant_latency_case(0.5), Weights(1, 0)).optimal_q == 5
    cfg = constant_latency_case(0.5)
    assert closed_form_Q(cfg, Weights(1, 100)).optimal_q == cfg.b_max
    d = closed_form_Q(cfg, Weights(1, 1)).d_q
    assert all(b > a for a, b in zip(d, d[1:]))


def test_closed_form_preconditions():
    with pytest.raises(ConfigError):
        check_assumptions(basic_scenario(0.5))
    cfg = constant_latency_case(0.5, exponential=False)
    with pytest.raises(ConfigError):
        closed_form_Q(cfg, Weights(1, 1))
    check_assumptions(cfg, need_exponential=False)


@pytest.mark.parametrize("rho,w2", [(0.3, 0.5), (0.5, 1.0), (0.7, 0.2)])
def test_linear_search_matches_closed_form(rho, w2):
    cfg = constant_latency_case(rho)
    assert linear_search_Q(cfg, Weights(1, w2), 120, c_o=0.0) == closed_form_Q(cfg, Weights(1, w2)).optimal_q


def test_linear_search_requires_unit_minimum():
    base = constant_latency_case(0.5)
    cfg = SystemConfig(base.lam, 2, base.b_max, base.latency, P4_ENERGY, base.dist)
    with pytest.raises(ConfigError):
        linear_search_Q(cfg, Weights(1, 1), 40)
