import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynbatch.evaluator import stationary_distribution
from dynbatch.mdp_transform import analytic_bound, discretization_bound, discretize
from dynbatch.policy import Greedy, Static, policy_vector
from dynbatch.queue_model import ConfigError, Exponential, Weights, basic_scenario
from dynbatch.smdp import build_truncated
from dynbatch.evaluator import evaluate


def discrete_gain(mdp, acts):
    """Average cost per step of the discretised chain under ``acts``."""
    rows = np.array([np.flatnonzero((mdp.states == s) & (mdp.actions == a))[0] for s, a in enumerate(acts)])
    p = mdp.kernel[rows]
    mu = stationary_distribution(p)
    return float(mu @ mdp.cost[rows])


def test_bound_formulas_agree():
    for rho in (0.2, 0.6, 0.9):
        m = build_truncated(basic_scenario(rho, b_max=8), Weights(1, 1), 30)
        assert analytic_bound(m) == pytest.approx(discretization_bound(m), rel=1e-12)


def test_discretized_kernel_is_stochastic():
    m = build_truncated(basic_scenario(0.7, b_max=8), Weights(1, 1), 24)
    d = discretize(m)
    assert np.all(d.kernel >= -1e-15)
    np.testing.assert_allclose(d.kernel.sum(axis=1), 1.0, atol=1e-12)
    assert 0 < d.eta_disc < discretization_bound(m)
    with pytest.raises(ConfigError):
        discretize(m, 1.0)
    with pytest.raises(ConfigError):
        discretize(m, 0.0)


@settings(max_examples=30, deadline=None)
@given(rho=st.floats(0.1, 0.9), w2=st.floats(0, 5), b=st.integers(1, 8), safety=st.floats(0.1, 0.99),
       exp=st.booleans())
def test_gain_equivalence(rho, w2, b, safety, exp):
    cfg = basic_scenario(rho, b_max=8, dist=Exponential() if exp else None)
    m = build_truncated(cfg, Weights(1, w2), 40)
    d = discretize(m, safety)
    for pol in (Greedy(), Static(min(b, 8))):
        acts = policy_vector(pol, cfg, m.s_max)
        # the SMDP gain is sum(mu c) / sum(mu y); the discretised chain's is sum(nu c/y)
        assert discrete_gain(d, acts) == pytest.approx(evaluate(m, acts).gain, abs=1e-6)
