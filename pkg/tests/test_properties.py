"""Generative invariance checks; each property runs on at least 100 random cases."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dynrd.aggregate import CohortEstimate, aggregate_tau, cohort_weights
from dynrd.data import PretrendVectors, RdVectors
from dynrd.estimator import RobustEstimate, estimate, nn_cov
from dynrd.localpoly import fit_one_side
from dynrd.pretrend import chi2_2_sf, pretrend_test

CASES = settings(max_examples=100, deadline=None,
                 suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(0, 2 ** 32 - 1)


def _instance(seed, n=120):
    rng = np.random.default_rng(seed)
    R = rng.uniform(-1, 1, n)
    R[:4] = [-0.05, -0.02, 0.01, 0.04]
    D = (rng.random(n) < 0.7).astype(float)
    D[:4] = 1.0
    Y = R + 0.5 * (R >= 0) + rng.normal(0, 0.3, n)
    W = (0.2 * R + rng.normal(0, 0.3, n)) * D
    return RdVectors(R, Y, W, D, 1)


@CASES
@given(seeds)
def test_permutation_invariance(seed):
    v = _instance(seed)
    perm = np.random.default_rng(seed + 1).permutation(v.n)
    a = estimate(v, 0.6, 0.8)
    b = estimate(v.take(perm), 0.6, 0.8)
    assert b.theta_bc == pytest.approx(a.theta_bc, rel=1e-10, abs=1e-12)
    assert b.v_bc == pytest.approx(a.v_bc, rel=1e-10, abs=1e-14)


@CASES
@given(seeds, st.floats(0.2, 0.9))
def test_weight_locality(seed, h):
    rng = np.random.default_rng(seed)
    R = rng.uniform(-1, 1, 150)
    R[:3] = [0.01, 0.05, 0.1]
    A = rng.normal(size=150)
    beta = fit_one_side(A, R, "above", 1, h).beta
    far = np.abs(R) > h
    A2 = A.copy()
    A2[far] = rng.normal(size=far.sum()) * 100
    assert np.array_equal(fit_one_side(A2, R, "above", 1, h).beta, beta)


@CASES
@given(seeds, st.floats(0.1, 10.0))
def test_scale_equivariance(seed, s):
    rng = np.random.default_rng(seed)
    R = rng.uniform(-1, 1, 100)
    R[:3] = [0.02, 0.1, 0.2]
    A = rng.normal(size=100)
    a = fit_one_side(A, R, "above", 2, 0.8).beta
    b = fit_one_side(A, s * R, "above", 2, s * 0.8).beta
    np.testing.assert_allclose(b, a * s ** -np.arange(3), rtol=1e-8, atol=1e-10)


@CASES
@given(st.floats(-5, 5), st.lists(st.integers(1, 1000), min_size=1, max_size=8),
       st.lists(st.floats(0.01, 2.0), min_size=8, max_size=8))
def test_aggregation_linearity(e, counts, ses):
    ests = [CohortEstimate(str(i), (i,), 1,
                           RobustEstimate(e, 0.0, e, s * s, s, (e, e), 0.1, 0.1, 1, 1), c)
            for i, (c, s) in enumerate(zip(counts, ses))]
    w = cohort_weights({str(i): c for i, c in enumerate(counts)})
    assert aggregate_tau(ests, w).theta_agg == pytest.approx(e, rel=1e-12, abs=1e-12)


@CASES
@given(seeds)
def test_group_swap_symmetry(seed):
    rng = np.random.default_rng(seed)
    n = 150
    R = rng.uniform(-1, 1, n)
    D = (rng.random(n) < 0.5).astype(float)
    D[:4], D[4:8] = 1.0, 0.0
    R[:8] = [-0.05, -0.02, 0.01, 0.04, -0.04, -0.01, 0.02, 0.05]
    dy = 0.2 + R + rng.normal(0, 0.3, n)
    v = PretrendVectors(R, dy * D, D, dy * (1 - D), 1 - D, 3, 1, 5)
    a = pretrend_test(v, 0.7, 0.9)
    b = pretrend_test(v.swapped(), 0.7, 0.9)
    assert b.pi_plus == pytest.approx(-a.pi_plus, rel=1e-9, abs=1e-12)
    assert b.pi_minus == pytest.approx(-a.pi_minus, rel=1e-9, abs=1e-12)
    assert b.stat == pytest.approx(a.stat, rel=1e-9, abs=1e-12)
    assert b.p_value == pytest.approx(a.p_value, rel=1e-9, abs=1e-12)


@CASES
@given(seeds, st.floats(0.01, 100.0))
def test_pretrend_scale_invariance(seed, s):
    rng = np.random.default_rng(seed)
    n = 150
    R = rng.uniform(-1, 1, n)
    D = (rng.random(n) < 0.5).astype(float)
    D[:4], D[4:8] = 1.0, 0.0
    R[:8] = [-0.05, -0.02, 0.01, 0.04, -0.04, -0.01, 0.02, 0.05]
    dy = 0.2 + R + rng.normal(0, 0.3, n)
    a = pretrend_test(PretrendVectors(R, dy * D, D, dy * (1 - D), 1 - D, 3, 1, 5), 0.7, 0.9)
    b = pretrend_test(PretrendVectors(R, s * dy * D, D, s * dy * (1 - D), 1 - D, 3, 1, 5), 0.7, 0.9)
    assert b.pi_plus == pytest.approx(s * a.pi_plus, rel=1e-8, abs=1e-12)
    za = a.pi_plus / a.se_plus
    zb = b.pi_plus / b.se_plus
    assert zb == pytest.approx(za, rel=1e-8, abs=1e-8)


@CASES
@given(st.floats(0, 200), st.floats(0, 200))
def test_p_value_monotone(x, y):
    lo, hi = min(x, y), max(x, y)
    assert chi2_2_sf(hi) <= chi2_2_sf(lo)
    assert 0.0 <= chi2_2_sf(hi) <= 1.0


@CASES
@given(seeds)
def test_nn_cov_symmetry(seed):
    rng = np.random.default_rng(seed)
    R = np.round(rng.uniform(-1, 1, 60), 1)
    A, B = rng.normal(size=60), rng.normal(size=60)
    for side in ("above", "below"):
        if ((R >= 0) if side == "above" else (R < 0)).sum() < 4:
            continue
        np.testing.assert_array_equal(nn_cov(A, B, R, side), nn_cov(B, A, R, side))
