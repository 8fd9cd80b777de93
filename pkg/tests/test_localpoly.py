import numpy as np
import pytest
from scipy.integrate import quad

from dynrd.errors import SingularFitError
from dynrd.localpoly import (Kernel, SideDesign, bias_factor, design_matrices, fit_one_side,
                             kernel_constants, kernel_weight, sandwich)

import oracle


def test_kernel_weight_examples():
    assert kernel_weight("triangular", 0.0, 1.0) == 1.0
    assert kernel_weight("triangular", 1.5, 1.0) == 0.0
    assert kernel_weight("triangular", 1.0, 2.0) == 0.25


def test_kernel_weight_rejects_nonpositive_bandwidth():
    with pytest.raises(ValueError):
        kernel_weight("triangular", 0.1, 0.0)
    with pytest.raises(ValueError):
        kernel_weight("triangular", 0.1, -1.0)


def test_kernel_shapes_integrate_to_one():
    for kind in ("triangular", "uniform", "epanechnikov"):
        k = Kernel(kind)
        val, _ = quad(lambda u: float(k(u)), -1, 1)
        assert val == pytest.approx(1.0, abs=1e-12)


def test_unknown_kernel():
    with pytest.raises(ValueError):
        Kernel("gaussian")


@pytest.mark.parametrize("h", [0.3, 0.7, 2.0])
def test_linear_reproduction(h):
    R = np.linspace(-1, 1, 41)
    fit = fit_one_side(2 + 3 * R, R, "above", 1, h)
    np.testing.assert_allclose(fit.beta, [2, 3], atol=1e-10)
    fit = fit_one_side(2 + 3 * R, R, "below", 1, h)
    np.testing.assert_allclose(fit.beta, [2, 3], atol=1e-10)


def test_constant_reproduction_quadratic():
    R = np.linspace(-1, 1, 41)
    fit = fit_one_side(np.ones_like(R), R, "above", 2, 1.0)
    np.testing.assert_allclose(fit.beta, [1, 0, 0], atol=1e-10)


def test_five_point_weighted_fit():
    # Closed form from the oracle's normal equations: (1/47, 402/47).
    R = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    A = np.array([1, 2, 2, 3, 5.0])
    fit = fit_one_side(A, R, "above", 1, 1.0)
    np.testing.assert_allclose(fit.beta, [1 / 47, 402 / 47], rtol=1e-12)
    np.testing.assert_allclose(fit.beta, oracle.wls(A, R, "above", 1, 1.0), rtol=1e-12)


def test_singular_fit_reports_diagnostics():
    R = np.array([0.1, 0.1, 0.1, -0.5])
    with pytest.raises(SingularFitError) as err:
        fit_one_side(np.ones(4), R, "above", 1, 1.0)
    assert err.value.details()["n_eff"] == 3


def test_single_point_gamma_pattern():
    gamma, _ = design_matrices(np.array([0.0]), "above", 1, 2, 1.0)
    np.testing.assert_allclose(gamma, [[1.0, 0.0], [0.0, 0.0]])


def test_gamma_matches_quadrature_on_grid():
    m = 20001
    R = np.linspace(-1, 1, m)
    gamma, vt = design_matrices(R, "above", 1, 2, 1.0, kernel="uniform")
    # Riemann sum with spacing 2/(m-1): gamma ~ integral / 2
    mom = lambda j: quad(lambda u: 0.5 * u ** j, 0, 1)[0]  # noqa: E731
    expect = np.array([[mom(0), mom(1)], [mom(1), mom(2)]]) / 2
    np.testing.assert_allclose(gamma, expect, rtol=2e-3)
    np.testing.assert_allclose(vt, np.array([mom(2), mom(3)]) / 2, rtol=2e-3)


def test_gamma_consistent_with_fit_and_oracle():
    R, *_ = oracle.instance(3)
    g1, t1 = design_matrices(R, "below", 2, 3, 0.7)
    d = SideDesign(R, "below", 2, 0.7)
    np.testing.assert_allclose(g1, d.gamma, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(t1, d.vartheta(3), rtol=1e-10, atol=1e-14)
    g2, t2 = oracle.gamma_scaled(R, "below", 2, 0.7, 3)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(t1, t2, rtol=1e-10, atol=1e-14)


def test_bias_factor_near_asymptotic_constant():
    R = np.linspace(-1, 1, 4001)
    k = kernel_constants("triangular", 1, q_powers=(2,))
    asym = k.bias_constant(0, 2)
    assert asym == pytest.approx(-0.1, abs=1e-12)
    for side in ("above", "below"):
        val = bias_factor(R, side, 0, 1, 2, 0.5)
        assert abs(val - asym) <= 0.1 * abs(asym)


def test_bias_factor_q0_is_indicator():
    R, *_ = oracle.instance(5)
    assert bias_factor(R, "above", 0, 1, 0, 0.8) == pytest.approx(1.0, abs=1e-12)
    assert bias_factor(R, "above", 1, 1, 0, 0.8) == pytest.approx(0.0, abs=1e-12)


def test_bias_factor_three_points():
    R = np.array([0.05, 0.3, 0.6])
    assert bias_factor(R, "above", 0, 1, 2, 1.0) == pytest.approx(-0.047371190754626105, rel=1e-10)


def test_sandwich_matches_equivalent_kernel():
    R, *_ = oracle.instance(9)
    rng = np.random.default_rng(0)
    sig = rng.uniform(0.5, 1.5, R.size)
    d = SideDesign(R, "above", 1, 0.6)
    ell = oracle.equivalent_kernel(R, "above", 1, 0.6, 0)
    assert sandwich(d, 0, d, 0, sig) / R.size == pytest.approx(np.sum(ell ** 2 * sig), rel=1e-10)


def test_triangular_constants():
    k2 = kernel_constants("triangular", 2, q_powers=(3,))
    assert 2 * k2.bias_constant(2, 3) == pytest.approx(18 / 7, rel=1e-10)
    k1 = kernel_constants("triangular", 1)
    assert k1.variance_constant(0) == pytest.approx(4.8, rel=1e-10)
