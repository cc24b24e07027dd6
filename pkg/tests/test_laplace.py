import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dred.errors import InvalidArgument
from dred.laplace import (LaplaceParams, continuous_pdf, discrete_pmf, quantize_deadzone, rate_bits,
                          rate_bits_grad_r, round_half_away, scale_quantize, soft_deadzone, soft_deadzone_grad,
                          soft_deadzone_grad_delta, theta_implicit, truncated_pmf, unscale)

rs = st.floats(0.01, 0.99)


def cell_mass(k, r, theta):
    """Integrate the continuous density over the quantizer cell of integer ``k``."""
    pdf = lambda z: -math.log(r) / 2 * r ** abs(z)
    if k == 0:
        val, _ = integrate.quad(pdf, -theta, theta, epsabs=1e-13, epsrel=1e-13)
        return val
    lo = abs(k) - 1 + theta
    val, _ = integrate.quad(pdf, lo, lo + 1, epsabs=1e-13, epsrel=1e-13)
    return val


class TestFrozenValues:
    # each value recomputed by hand from the closed forms
    def test_pdf_at_zero(self):
        assert continuous_pdf(0.0, LaplaceParams(0.6)) == pytest.approx(0.255413, abs=1e-6)

    def test_pmf_r06_theta075(self):
        p = LaplaceParams(0.6, 0.75)
        assert discrete_pmf(0, p) == pytest.approx(0.318268, abs=1e-6)
        assert discrete_pmf(1, p) == pytest.approx(0.136346, abs=1e-6)
        assert discrete_pmf(-1, p) == discrete_pmf(1, p)

    def test_theta_implicit(self):
        assert theta_implicit(0.6) == pytest.approx(0.563171, abs=1e-6)
        assert theta_implicit(0.999) == pytest.approx(0.500125, abs=1e-6)

    def test_soft_deadzone(self):
        assert soft_deadzone(0.6, 0.25) == pytest.approx(0.365707, abs=1e-6)
        assert soft_deadzone(0.35, 0.25) == pytest.approx(0.159601, abs=1e-6)

    def test_entropy_r06(self):
        p = LaplaceParams.implicit(0.6)
        k = np.arange(-600, 601)
        pk = discrete_pmf(k, p)
        assert -(pk * np.log2(pk)).sum() == pytest.approx(3.381810, abs=1e-6)


@pytest.mark.parametrize("r", [0.3, 0.6, 0.9])
@pytest.mark.parametrize("theta", [0.5, 0.75, None])
def test_pushforward_matches_quadrature(r, theta):
    theta = theta_implicit(r) if theta is None else theta
    p = LaplaceParams(r, theta)
    for k in range(-6, 7):
        assert abs(discrete_pmf(k, p) - cell_mass(k, r, theta)) < 1e-9


@settings(max_examples=60)
@given(rs, st.floats(0.5, 1.5))
def test_pmf_sums_to_one(r, theta):
    p = LaplaceParams(r, theta)
    k = np.arange(-5000, 5001)
    assert discrete_pmf(k, p).sum() == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=60)
@given(rs, st.integers(-40, 40))
def test_rate_is_code_length_under_implicit_theta(r, k):
    p = LaplaceParams.implicit(r)
    assert rate_bits(abs(k), r) == pytest.approx(-math.log2(discrete_pmf(k, p)), rel=1e-12, abs=1e-12)


@given(rs)
def test_implicit_pmf_closed_form(r):
    p = LaplaceParams.implicit(r)
    for k in (0, 1, 5):
        assert discrete_pmf(k, p) == pytest.approx((1 - r) / (1 + r) * r**k, rel=1e-10)


def test_degenerate_limit():
    entropies = []
    for r in (1e-2, 1e-3, 1e-6, 1e-8):
        p = LaplaceParams.implicit(r)
        pk = discrete_pmf(np.arange(-50, 51), p)
        pk = pk[pk > 0]
        h = -(pk * np.log2(pk)).sum()
        # leading term: two symbols of mass ~r each
        assert h < 3 * r * (math.log2(1 / r) + 2)
        entropies.append(h)
    assert entropies == sorted(entropies, reverse=True)
    assert entropies[-1] < 1e-6
    assert rate_bits(3.0, 1e-12) == 0.0
    assert rate_bits(0.0, 1e-10) == 0.0


def test_rate_monte_carlo():
    # E|z| of the Laplace density is -1 / ln r
    r = 0.6
    rng = np.random.default_rng(0)
    z = rng.laplace(scale=-1 / math.log(r), size=400000)
    mc = rate_bits(np.abs(z), r).mean()
    exact = -math.log2((1 - r) / (1 + r)) + math.log2(r) / math.log(r)
    assert mc == pytest.approx(exact, rel=5e-3)


def test_rate_grad_r_matches_fd():
    for r in (0.1, 0.5, 0.9):
        for z in (0.0, 1.0, 3.5):
            h = 1e-6
            fd = (rate_bits(z, r + h) - rate_bits(z, r - h)) / (2 * h)
            assert rate_bits_grad_r(z, r) == pytest.approx(fd, rel=1e-6)


def test_quantizer_examples():
    assert quantize_deadzone(0.4, 0.5) == 0
    assert quantize_deadzone(0.5, 0.5) == 1
    assert quantize_deadzone(-0.5, 0.5) == -1
    assert quantize_deadzone(0.7, 0.75) == 0
    assert quantize_deadzone(0.75, 0.75) == 1
    assert quantize_deadzone(-2.3, 0.75) == -2
    with pytest.raises(InvalidArgument):
        quantize_deadzone(1.0, 0.4)


@given(st.floats(-50, 50), st.floats(0.5, 2.0))
def test_deadzone_properties(z, theta):
    k = quantize_deadzone(z, theta)
    assert quantize_deadzone(-z, theta) == -k
    if abs(z) < theta:
        assert k == 0
    else:
        # integer k covers |z| in [|k| - 1 + theta, |k| + theta)
        assert abs(k) - 1 + theta <= abs(z) + 1e-9
        assert abs(z) < abs(k) + theta + 1e-9


def test_half_theta_is_rounding():
    z = np.linspace(-10, 10, 4001)
    np.testing.assert_array_equal(quantize_deadzone(z, 0.5), round_half_away(z).astype(np.int64))
    assert round_half_away(2.5) == 3 and round_half_away(-2.5) == -3


@settings(max_examples=100)
@given(st.floats(-20, 20), st.floats(0.0, 3.0))
def test_soft_deadzone_grads(z, delta):
    h = 1e-6
    fd = (soft_deadzone(z + h, delta) - soft_deadzone(z - h, delta)) / (2 * h)
    assert soft_deadzone_grad(z, delta) == pytest.approx(fd, abs=1e-6)
    fd = (soft_deadzone(z, delta + h) - soft_deadzone(z, max(delta - h, 0.0))) / (h + min(h, delta))
    assert soft_deadzone_grad_delta(z, delta) == pytest.approx(fd, abs=1e-5)


def test_soft_deadzone_identity_and_monotone():
    z = np.linspace(-5, 5, 1001)
    np.testing.assert_array_equal(soft_deadzone(z, 0.0), z)
    assert np.all(soft_deadzone_grad(z, 0.0) == 1.0)
    for delta in (0.1, 0.5, 2.0):
        assert np.all(soft_deadzone_grad(z, delta) > 0)


def test_scale_round_trip():
    z = np.array([0.13, -2.7, 5.0])
    q = np.array([10.0, 2.0, 1.0])
    sym = scale_quantize(z, q, 0.0)
    np.testing.assert_array_equal(sym, [1, -5, 5])
    np.testing.assert_allclose(unscale(sym, q), [0.1, -2.5, 5.0])
    with pytest.raises(InvalidArgument):
        scale_quantize(1.0, 0.0, 0.0)


def test_params_validation():
    with pytest.raises(InvalidArgument):
        LaplaceParams(1.0)
    with pytest.raises(InvalidArgument):
        LaplaceParams(0.5, 0.3)
    with pytest.raises(InvalidArgument):
        LaplaceParams(0.5, 0.5, -0.1)
    with pytest.raises(InvalidArgument):
        LaplaceParams(0.5, epsilon=0.2)
    assert LaplaceParams(0.5, 0.75).delta == 0.25
    p = LaplaceParams.from_sigma(2.0)
    assert p.sigma == pytest.approx(2.0)


def test_truncated_pmf_sums_to_one():
    for r in (0.1, 0.9, 0.999):
        p = truncated_pmf(LaplaceParams.implicit(r))
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert p[0] == p[-1]
