import csv

import numpy as np
import pytest

from dynbatch.policy import ControlLimit, Greedy, Static, Table
from dynbatch.queue_model import BatchFunction, ConfigError, Deterministic, SystemConfig, basic_scenario
from dynbatch.simulator import (
    SimulationError,
    percentile,
    simulate,
    write_histogram_csv,
    write_trace_csv,
)


def test_percentile_nearest_rank():
    x = list(range(1, 11))
    assert percentile(x, 0.5) == 5
    assert percentile(x, 0.95) == 10
    assert percentile(x, 0.1) == 1
    assert percentile([3.0], 0.99) == 3.0
    with pytest.raises(ValueError):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile(x, 0.0)


def test_reproducible_and_seed_sensitive():
    cfg = basic_scenario(0.6)
    a = simulate(cfg, Greedy(), 20_000, seed=11)
    b = simulate(cfg, Greedy(), 20_000, seed=11)
    c = simulate(cfg, Greedy(), 20_000, seed=12)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.p_bar == b.p_bar
    assert not np.array_equal(a.samples, c.samples)


def test_common_arrivals_across_policies():
    cfg = basic_scenario(0.6)
    a = simulate(cfg, Greedy(), 5_000, seed=3, keep_trace=True)
    b = simulate(cfg, Static(16), 5_000, seed=3, keep_trace=True)
    np.testing.assert_array_equal(a.arrivals, b.arrivals)


def test_fcfs_and_batch_sizes():
    cfg = basic_scenario(0.6)
    s = simulate(cfg, Static(8), 8_000, seed=1, keep_trace=True)
    assert np.all(np.diff(s.departures) >= 0)
    assert np.all(s.departures > s.arrivals)
    assert set(np.unique(s.batch_of)) == {8}
    s = simulate(cfg, ControlLimit(4), 8_000, seed=1, keep_trace=True)
    assert s.batch_of.min() >= 4


def test_md1_against_pollaczek_khinchine():
    rho = 0.6
    cfg = SystemConfig(rho / 2.0, 1, 1, BatchFunction.constant(2.0), BatchFunction.constant(5.0), Deterministic())
    s = simulate(cfg, Greedy(), 300_000, seed=5)
    expected = 2.0 + rho * 2.0 / (2 * (1 - rho))
    assert s.w_bar == pytest.approx(expected, rel=0.02)
    assert s.p_bar == pytest.approx(cfg.lam * 5.0, rel=0.01)


@pytest.mark.parametrize("policy", [Greedy(), Static(16), ControlLimit(6)], ids=lambda p: p.id)
def test_littles_law(policy):
    cfg = basic_scenario(0.7)
    s = simulate(cfg, policy, 200_000, seed=2)
    assert s.l_bar == pytest.approx(cfg.lam * s.w_bar, rel=0.01)


def test_stats_helpers(tmp_path):
    cfg = basic_scenario(0.5)
    s = simulate(cfg, Greedy(), 4_000, seed=0, keep_trace=True)
    assert s.slo_satisfaction(s.samples[-1]) == 1.0
    assert s.slo_satisfaction(0.0) == 0.0
    assert s.percentile(0.95) == s.percentiles[0.95]
    left, counts = s.histogram(1.0)
    assert counts.sum() == s.n_requests
    write_trace_csv(tmp_path / "t.csv", s)
    write_histogram_csv(tmp_path / "h.csv", s, 1.0)
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["arrival_ms", "departure_ms", "batch_size"] and len(rows) == 4_001
    assert len(s.csv_row()) == len(s.CSV_HEADER)
    with pytest.raises(ValueError):
        write_trace_csv(tmp_path / "x.csv", simulate(cfg, Greedy(), 100))


def test_simulation_errors():
    cfg = basic_scenario(0.5, b_max=4)
    with pytest.raises(ConfigError):
        simulate(cfg, Greedy(), 0)
    with pytest.raises(ConfigError):
        simulate(cfg, Greedy(), 10, warmup_fraction=0.7)
    with pytest.raises(SimulationError):
        simulate(cfg, Table((0, 3, 3, 3, 3, 3)), 100)
