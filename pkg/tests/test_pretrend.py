import numpy as np
import pytest

from dynrd.data import PretrendVectors
from dynrd.errors import DegenerateGroupError, EstimationError
from dynrd.pretrend import (SidePretrend, chi2_2_sf, joint_test, pooled_joint_test,
                            pretrend_side, pretrend_test)
from dynrd.sim import simulate_pretrend_vectors

import oracle


def _vectors(seed=0, n=300, slope=0.0):
    return simulate_pretrend_vectors(n, slope, seed=seed)


def test_constant_trend_gives_zero():
    rng = np.random.default_rng(1)
    R = rng.uniform(-1, 1, 200)
    D = (rng.random(200) < 0.5).astype(float)
    c0 = 0.7
    v = PretrendVectors(R, c0 * D, D, c0 * (1 - D), 1 - D, 3, 1, 5)
    for side in ("above", "below"):
        res = pretrend_side(v, side, 0.6, 0.8)
        assert abs(res.pi_hat) < 1e-10


def test_all_never_treated_is_degenerate():
    R = np.linspace(-1, 1, 101)
    v = PretrendVectors(R, R, np.ones(101), np.zeros(101), np.zeros(101), 3, 1, 5)
    with pytest.raises(DegenerateGroupError) as err:
        pretrend_side(v, "above", 0.5, 0.7)
    assert err.value.details()["group"] == "G"


def test_matches_oracle():
    v = _vectors(seed=3, n=120)
    o = oracle.pretrend(v.R, v.J, v.D, v.K, v.G, 0.7, 0.9)
    res = pretrend_test(v, 0.7, 0.9)
    for key in ("pi_plus", "pi_minus", "v_plus", "v_minus", "stat", "p_value"):
        assert getattr(res, key) == pytest.approx(o[key], rel=1e-9)


def test_joint_test_examples():
    zero = SidePretrend("above", 0.0, 0.0, 1.0, 0.0)
    res = joint_test(zero, SidePretrend("below", 0.0, 0.0, 2.0, 0.0))
    assert res.stat == 0.0 and res.p_value == 1.0
    res = joint_test(SidePretrend("above", 0, 1.4, 1.0, 0), SidePretrend("below", 0, 0.0, 1.0, 0))
    assert res.stat == pytest.approx(1.96)
    assert res.p_value == pytest.approx(0.37531, abs=1e-5)


def test_joint_test_rejects_nonpositive_variance():
    with pytest.raises(EstimationError):
        joint_test(SidePretrend("above", 0, 1, 0.0, 0), SidePretrend("below", 0, 1, 1.0, 0))


def test_chi2_tail_matches_scipy():
    from scipy.stats import chi2
    for x in (0.0, 0.5, 3.0, 9.2):
        assert chi2_2_sf(x) == pytest.approx(chi2.sf(x, 2), rel=1e-12)


def test_swap_symmetry():
    v = _vectors(seed=4)
    a = pretrend_test(v, 0.6, 0.8)
    b = pretrend_test(v.swapped(), 0.6, 0.8)
    assert b.pi_plus == pytest.approx(-a.pi_plus, rel=1e-10)
    assert b.stat == pytest.approx(a.stat, rel=1e-10)


def test_pooled_single_part_equals_joint():
    v = _vectors(seed=5)
    sides = [pretrend_side(v, s, 0.6, 0.8) for s in ("above", "below")]
    assert pooled_joint_test([(1.0, *sides)]).stat == pytest.approx(joint_test(*sides).stat)
    with pytest.raises(ValueError):
        pooled_joint_test([(0.5, *sides)])


def test_violation_is_detected_more_often():
    null = [pretrend_test(simulate_pretrend_vectors(1500, 0.0, 9, r), 0.5, 0.7).p_value
            for r in range(20)]
    bad = [pretrend_test(simulate_pretrend_vectors(1500, 0.2, 9, r), 0.5, 0.7).p_value
           for r in range(20)]
    assert np.mean(np.array(bad) < 0.05) > np.mean(np.array(null) < 0.05)
