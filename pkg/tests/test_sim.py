import hashlib

import numpy as np
import pytest

from dynrd.aggregate import EstimationConfig
from dynrd.sim import (DgpParams, SimpleDgp, monte_carlo, replication_rng, simulate_panel,
                       true_theta)

GOLDEN_PANEL = "5db5a8df8240525b2d125af90d90d9c297a449643a6a4ac41e8a32f437e905e9"


def _panel_hash(panel):
    h = hashlib.sha256()
    for c in ("unit", "period", "q_held", "r", "y"):
        h.update(np.ascontiguousarray(panel.frame[c].to_numpy(dtype=float)).tobytes())
    return h.hexdigest()


def test_true_theta():
    p = DgpParams()
    assert true_theta(p, 2) == pytest.approx(0.2)
    assert true_theta(p, 5) == pytest.approx(0.0)
    assert true_theta(p, 4) == true_theta(p, 7)
    q = DgpParams(theta1_mean=0.0)
    assert all(true_theta(q, t) == q.theta0_mean for t in range(6))
    with pytest.raises(ValueError):
        true_theta(p, -1)


def test_param_validation():
    with pytest.raises(ValueError):
        DgpParams(rho_q=(0.1, 0.2))
    with pytest.raises(ValueError):
        DgpParams(p_q0=1.5)


def test_panel_shape_and_golden_hash():
    panel = simulate_panel(DgpParams(n=200, t_bar=10, seed=42))
    assert len(panel.frame) == 2000
    assert panel.period_range == (1, 10)
    assert _panel_hash(panel) == GOLDEN_PANEL
    assert _panel_hash(simulate_panel(DgpParams(n=200, t_bar=10, seed=42))) == GOLDEN_PANEL


def test_margins_only_when_held():
    f = simulate_panel(DgpParams(n=300, t_bar=8, seed=1)).frame
    assert f.loc[~f.q_held, "r"].isna().all()
    assert f.loc[f.q_held, "r"].notna().all()


def test_initial_holding_rate():
    q0 = simulate_panel(DgpParams(n=30000, t_bar=2, seed=0)).meta["q0"]
    se = np.sqrt(0.1 * 0.9 / q0.size)
    assert abs(q0.mean() - 0.1) <= 3 * se


def test_streams_are_counter_based():
    a = replication_rng(5, 3).normal(size=4)
    replication_rng(5, 0).normal(size=100)
    b = replication_rng(5, 3).normal(size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, replication_rng(5, 4).normal(size=4))


def test_null_dgp_outcomes_are_noise():
    f = simulate_panel(DgpParams.null(n=2000, t_bar=6, seed=3)).frame
    assert abs(f.y.mean()) < 4 * np.sqrt(0.2 / len(f))
    assert f.y.var() == pytest.approx(0.2, rel=0.05)


def test_simple_dgp_draws():
    d = SimpleDgp(n=500, seed=1)
    v = d.draw(0)
    assert v.n == 500 and v.tau == 1
    assert np.all(v.W * (1 - v.D) == 0)
    np.testing.assert_array_equal(v.Y, d.draw(0).Y)
    assert d.theta == pytest.approx(0.3)


def test_monte_carlo_deterministic():
    p = DgpParams(n=1500, t_bar=12, seed=4)
    cfg = EstimationConfig()
    a = monte_carlo(p, 1, cfg, (-1, 2), cohorts={"block": 4})
    b = monte_carlo(p, 1, cfg, (-1, 2), cohorts={"block": 4})
    assert a.to_dict(include_runtime=False) == b.to_dict(include_runtime=False)
    assert list(a.plot_frame().columns) == ["tau", "true", "mean_est", "sd"]


def test_monte_carlo_replication_independence():
    p = DgpParams(n=1500, t_bar=12, seed=4)
    both = monte_carlo(p, 2, EstimationConfig(), (0, 1), pretrend=None, cohorts={"block": 4})
    second = monte_carlo(p, 1, EstimationConfig(), (0, 1), pretrend=None, first_rep=1,
                         cohorts={"block": 4})
    assert both.per_rep[1]["est"] == second.per_rep[0]["est"]
