import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tarma.errors import InvalidInputError, NumericFailureError
from tarma.loss import LossSpec, dpsi, irls_weight, m_scale, psi, rho

POWER_HALF = LossSpec(family="power_divergence", alpha=0.5)
POWER_ONE = LossSpec(family="power_divergence", alpha=1.0)
ML = LossSpec(family="power_divergence", alpha=0.0)
BISQUARE = LossSpec(family="bisquare")
LS = LossSpec(family="least_squares")
ALL_SPECS = [POWER_HALF, POWER_ONE, ML, BISQUARE, LS]


class TestRho:
    def test_power_value_at_zero(self):
        # alpha=1, sigma=1: rho(0) = 1 - (2*pi)^(-1/2)
        expected = 1.0 - (2.0 * math.pi) ** -0.5
        assert abs(rho(0.0, 1.0, POWER_ONE) - expected) < 1e-15
        assert abs(expected - 0.6010577196) < 1e-9

    def test_power_bound_at_infinity(self):
        # the exponential vanishes, leaving the bound 1/alpha
        assert abs(rho(1e6, 1.0, POWER_ONE) - 1.0) < 1e-12
        assert abs(rho(1e6, 1.0, POWER_HALF) - 2.0) < 1e-12

    def test_continuity_in_alpha_at_zero(self):
        # compare alpha=1e-8 against alpha=0 after removing the additive
        # constant (values at z=0)
        tiny = LossSpec(family="power_divergence", alpha=1e-8)
        lhs = rho(1.3, 1.0, tiny) - rho(0.0, 1.0, tiny)
        rhs = rho(1.3, 1.0, ML) - rho(0.0, 1.0, ML)
        assert abs(lhs - rhs) < 1e-6

    def test_ml_is_gaussian_nll(self):
        z, s = 0.7, 1.3
        expected = 0.5 * math.log(2 * math.pi * s * s) + z * z / (2 * s * s)
        assert abs(rho(z, s, ML) - expected) < 1e-15

    def test_rejects_bad_sigma(self):
        with pytest.raises(InvalidInputError):
            rho(1.0, 0.0, POWER_ONE)

    @pytest.mark.parametrize("spec", ALL_SPECS)
    def test_even_nondecreasing_minimal_at_zero(self, spec):
        z = np.linspace(-10, 10, 2001)
        vals = rho(z, 1.0, spec)
        assert np.allclose(vals, vals[::-1], atol=1e-12)  # even
        right = vals[z >= 0]
        assert np.all(np.diff(right) >= -1e-12)  # non-decreasing in |z|
        assert np.all(vals >= rho(0.0, 1.0, spec) - 1e-12)


class TestPsi:
    @pytest.mark.parametrize("spec", ALL_SPECS)
    def test_zero_at_zero(self, spec):
        assert psi(0.0, 1.0, spec) == 0.0

    def test_redescending_peak_at_sigma_over_sqrt_alpha(self):
        z = np.linspace(0, 10, 5001)
        vals = np.abs(psi(z, 1.0, POWER_ONE))
        peak = z[np.argmax(vals)]
        assert abs(peak - 1.0) < 0.01  # sigma/sqrt(alpha) = 1
        assert psi(5.0, 1.0, POWER_ONE) < psi(1.0, 1.0, POWER_ONE) / 10.0

    def test_peak_scales_with_sigma_and_alpha(self):
        sigma, alpha = 2.0, 0.5
        spec = LossSpec(family="power_divergence", alpha=alpha)
        z = np.linspace(0, 20, 20001)
        peak = z[np.argmax(np.abs(psi(z, sigma, spec)))]
        assert abs(peak - sigma / math.sqrt(alpha)) < 0.01

    @pytest.mark.parametrize("spec", ALL_SPECS)
    @pytest.mark.parametrize("z", [-2.0, -0.5, 0.7, 3.0])
    def test_matches_finite_differences_of_rho(self, spec, z):
        h = 1e-6
        fd = (rho(z + h, 1.0, spec) - rho(z - h, 1.0, spec)) / (2 * h)
        an = psi(z, 1.0, spec)
        assert abs(fd - an) <= 1e-6 * max(1.0, abs(an))

    @pytest.mark.parametrize("spec", ALL_SPECS)
    @pytest.mark.parametrize("z", [-2.0, -0.5, 0.7, 3.0])
    def test_dpsi_matches_finite_differences_of_psi(self, spec, z):
        h = 1e-6
        fd = (psi(z + h, 1.0, spec) - psi(z - h, 1.0, spec)) / (2 * h)
        an = dpsi(z, 1.0, spec)
        assert abs(fd - an) <= 1e-5 * max(1.0, abs(an))

    def test_odd_function(self):
        z = np.linspace(-6, 6, 101)
        assert np.allclose(psi(z, 1.3, POWER_HALF), -psi(-z, 1.3, POWER_HALF),
                           atol=1e-14)

    def test_bounded_for_positive_alpha(self):
        z = np.linspace(-50, 50, 10001)
        assert np.max(np.abs(psi(z, 1.0, POWER_ONE))) < math.inf
        # the supremum sits at |z| = sigma/sqrt(alpha)
        assert np.argmax(np.abs(psi(z, 1.0, POWER_ONE))) in np.flatnonzero(
            np.isclose(np.abs(z), 1.0, atol=0.011))


class TestIrlsWeight:
    def test_maximal_at_zero(self):
        e = np.array([0.0, 0.5, -2.0, 7.0])
        w = irls_weight(e, 1.0, POWER_ONE)
        assert w[0] == 1.0 and np.all(w <= 1.0)

    def test_constant_for_ls(self):
        e = np.array([0.0, 1.0, -10.0, 100.0])
        assert np.all(irls_weight(e, 1.0, ML) == 1.0)
        assert np.all(irls_weight(e, 1.0, LS) == 1.0)

    def test_power_ratio_closed_form(self):
        w3 = irls_weight(3.0, 1.0, POWER_ONE)
        w0 = irls_weight(0.0, 1.0, POWER_ONE)
        assert abs(w3 / w0 - math.exp(-4.5)) < 1e-12

    def test_bisquare_vanishes_past_cutoff(self):
        assert irls_weight(5.0 * 4.685, 1.0, BISQUARE) == 0.0


class TestMScale:
    def test_symmetric_three_point(self):
        assert abs(m_scale([-1.0, 0.0, 1.0]) - 1.0 / 0.6745) < 1e-12

    def test_degenerate_rejected(self):
        with pytest.raises(NumericFailureError):
            m_scale([2.0, 2.0, 2.0, 2.0])

    def test_consistency_at_gaussian(self):
        e = np.random.default_rng(0).normal(size=100_000)
        assert abs(m_scale(e) - 1.0) < 0.02

    @given(st.floats(0.01, 100.0))
    @settings(max_examples=30, deadline=None)
    def test_scale_equivariance(self, c):
        e = np.array([0.3, -1.2, 2.2, 0.05, -0.8])
        assert np.isclose(m_scale(c * e), c * m_scale(e), rtol=1e-12)
