import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from swarch.core import (
    InverseGamma,
    ModelParams,
    Point,
    Theta,
    a_power_moment,
    endo_abs_moment,
    endo_cross_moment,
    geometric_truncation,
    rescale_factor,
    rescale_factors,
    restart_stationary_pmf,
    restart_transition_prob,
    student_abs_moment,
)
from swarch.errors import MomentDiverges


def inverse_gamma_density(sigma, alpha, beta):
    """Mixing density for the squared-volatility inverse-gamma law."""
    return (
        2 ** (1 - alpha / 2)
        / math.gamma(alpha / 2)
        * beta ** alpha
        / sigma ** (alpha + 1)
        * np.exp(-(beta ** 2) / (2 * sigma ** 2))
    )


class TestTypes:
    def test_mixture_validation(self):
        with pytest.raises(ValueError):
            InverseGamma(alpha=-1, beta=1)
        with pytest.raises(ValueError):
            InverseGamma(alpha=4, beta=0)
        with pytest.raises(ValueError):
            Point(sigma0=0)

    def test_params_validation(self):
        mix = InverseGamma(4.5, 0.07)
        with pytest.raises(ValueError):
            ModelParams(D=0.0, nu=0.01, mixture=mix, M=42)
        with pytest.raises(ValueError):
            ModelParams(D=0.19, nu=0.0, mixture=mix, M=42)
        with pytest.raises(ValueError):
            ModelParams(D=0.19, nu=1.5, mixture=mix, M=42)
        with pytest.raises(ValueError):
            ModelParams(D=0.19, nu=0.01, mixture=mix, M=0)
        ModelParams(D=0.19, nu=1.0, mixture=mix, M=1)

    def test_theta_allows_missing_alpha(self):
        Theta(D=0.2, nu=0.05)
        with pytest.raises(ValueError):
            Theta(D=0.2, nu=0.05, alpha=-2.0)


class TestRescaleFactor:
    def test_first_factor_is_one(self):
        for D in (0.1, 0.25, 0.5, 0.8):
            assert rescale_factor(1, D) == 1.0

    def test_half_exponent_gives_constant_sequence(self):
        for i in (1, 2, 7, 1000):
            assert rescale_factor(i, 0.5) == pytest.approx(1.0, abs=1e-15)

    def test_direct_value(self):
        assert rescale_factor(2, 0.25) == pytest.approx(
            math.sqrt(2 ** 0.5 - 1), abs=1e-12
        )
        assert rescale_factor(2, 0.25) == pytest.approx(0.643594, abs=5e-7)

    def test_vector_matches_scalar(self):
        a = rescale_factors(50, 0.21)
        for i in (1, 2, 17, 50):
            assert a[i - 1] == pytest.approx(rescale_factor(i, 0.21), abs=1e-15)

    def test_decay_and_limit(self):
        # strictly decreasing below D=1/2, with i^(1/2-D) a_i -> sqrt(2D)
        for D in (0.16, 0.25, 0.4):
            a = rescale_factors(100, D)
            assert np.all(np.diff(a) < 0)
            i = 10 ** 6
            limit = i ** (0.5 - D) * rescale_factor(i, D)
            assert limit == pytest.approx(math.sqrt(2 * D), rel=1e-3)


class TestRestartChain:
    def test_pmf_values(self):
        assert restart_stationary_pmf(1, 0.3) == pytest.approx(0.3)
        assert restart_stationary_pmf(3, 0.5) == pytest.approx(0.125)
        assert restart_stationary_pmf(1, 1.0) == 1.0
        assert restart_stationary_pmf(2, 1.0) == 0.0

    def test_pmf_sums_to_one(self):
        i = np.arange(1, 5000)
        assert restart_stationary_pmf(i, 0.05).sum() == pytest.approx(1.0, abs=1e-10)

    def test_transition_cases(self):
        nu = 0.2
        assert restart_transition_prob(1, 7, nu) == nu
        assert restart_transition_prob(8, 7, nu) == 1 - nu
        assert restart_transition_prob(5, 7, nu) == 0.0

    @given(
        nu=st.floats(0.01, 1.0),
        i=st.integers(1, 40),
    )
    def test_stationarity_of_pmf(self, nu, i):
        # sum_j W(i, j) pi(j) = pi(i), with the kernel supported on j=i-1 or i=1
        j_max = geometric_truncation(nu, 1e-14)
        total = sum(
            restart_transition_prob(i, j, nu) * restart_stationary_pmf(j, nu)
            for j in range(1, j_max + 1)
        )
        assert total == pytest.approx(restart_stationary_pmf(i, nu), abs=1e-12)


class TestGeometricTruncation:
    def test_degenerate_chain(self):
        assert geometric_truncation(1.0, 1e-12) == 1

    def test_small_example(self):
        assert geometric_truncation(0.5, 0.1) == 4

    def test_large_example(self):
        assert geometric_truncation(0.01, 1e-12) == 2750

    @given(
        nu=st.floats(1e-3, 0.999),
        exponent=st.integers(2, 12),
    )
    @settings(max_examples=50)
    def test_minimality(self, nu, exponent):
        eps = 10.0 ** (-exponent)
        i_max = geometric_truncation(nu, eps)
        assert (1 - nu) ** i_max < eps
        if i_max > 1:
            assert (1 - nu) ** (i_max - 1) >= eps


class TestStudentAbsMoment:
    def test_normalization(self):
        for a in (3.0, 4.5, 10.0):
            assert student_abs_moment(0, a) == pytest.approx(1.0, abs=1e-14)

    def test_second_moment_identity(self):
        for a in (3.0, 4.5, 10.0):
            assert student_abs_moment(2, a) * (a - 2) == pytest.approx(1.0, abs=1e-12)

    def test_divergence(self):
        with pytest.raises(MomentDiverges):
            student_abs_moment(5, 4)
        with pytest.raises(MomentDiverges):
            student_abs_moment(4, 4)

    def test_against_quadrature(self):
        a, q = 4.5, 1.3
        const = math.gamma((a + 1) / 2) / (math.sqrt(math.pi) * math.gamma(a / 2))
        val, _ = quad(
            lambda z: 2 * const * z ** q * (1 + z * z) ** (-(a + 1) / 2), 0, np.inf
        )
        assert student_abs_moment(q, a) == pytest.approx(val, abs=1e-10)


class TestEndoMoments:
    def test_second_moment_closed_forms(self):
        assert endo_abs_moment(2, InverseGamma(4.5, 0.07)) == pytest.approx(
            0.07 ** 2 / 2.5, rel=1e-12
        )
        assert endo_abs_moment(2, Point(0.3)) == pytest.approx(0.09, rel=1e-12)

    def test_divergence(self):
        with pytest.raises(MomentDiverges):
            endo_abs_moment(6, InverseGamma(4.5, 1.0))
        with pytest.raises(MomentDiverges):
            endo_cross_moment(3, InverseGamma(4.5, 1.0))

    @pytest.mark.parametrize("q", [0.5, 1.0, 2.0, 3.1])
    @pytest.mark.parametrize("alpha,beta", [(4.5, 1.0), (5.5, 0.14), (8.0, 0.04)])
    def test_abs_moment_against_quadrature(self, q, alpha, beta):
        if q >= alpha:
            return
        sigma_q, _ = quad(
            lambda s: s ** q * inverse_gamma_density(s, alpha, beta), 0, np.inf
        )
        expected = 2 ** (q / 2) / math.sqrt(math.pi) * math.gamma((q + 1) / 2) * sigma_q
        assert endo_abs_moment(q, InverseGamma(alpha, beta)) == pytest.approx(
            expected, abs=1e-8, rel=1e-8
        )

    @pytest.mark.parametrize("q,alpha,beta", [(1.0, 4.5, 1.0), (1.5, 6.0, 0.07), (2.0, 5.5, 0.14)])
    def test_cross_moment_against_nested_quadrature(self, q, alpha, beta):
        # inner normal expectation evaluated numerically as well
        def normal_abs_q(sigma):
            val, _ = quad(
                lambda y: 2
                * y ** q
                * np.exp(-(y ** 2) / (2 * sigma ** 2))
                / (sigma * math.sqrt(2 * math.pi)),
                0,
                np.inf,
            )
            return val

        expected, _ = quad(
            lambda s: inverse_gamma_density(s, alpha, beta) * normal_abs_q(s) ** 2,
            0,
            np.inf,
            limit=200,
        )
        got = endo_cross_moment(q, InverseGamma(alpha, beta))
        assert got == pytest.approx(expected, abs=1e-8, rel=1e-8)

    def test_cross_moment_point_factorizes(self):
        q = 1.7
        mix = Point(0.4)
        assert endo_cross_moment(q, mix) == pytest.approx(
            endo_abs_moment(q, mix) ** 2, rel=1e-14
        )


class TestAPowerMoment:
    def test_degenerate_chain(self):
        assert a_power_moment(3.0, 1.0, 0.2) == 1.0

    def test_constant_sequence(self):
        assert a_power_moment(1.7, 0.3, 0.5) == pytest.approx(1.0, abs=1e-11)

    def test_against_brute_force(self):
        q, nu, D = 2.0, 0.03, 0.21
        i = np.arange(1, 10 ** 6 + 1)
        a2 = i ** (2 * D) - (i - 1) ** (2 * D)
        brute = float((a2 ** (q / 2) * nu * (1 - nu) ** (i - 1)).sum())
        assert a_power_moment(q, nu, D, eps=1e-12) == pytest.approx(brute, abs=1e-10)

    def test_growing_sequence_still_finite(self):
        # D > 1/2 grows polynomially; the geometric factor keeps the series finite
        val = a_power_moment(2.0, 0.2, 0.8)
        i = np.arange(1, 2000)
        a2 = i ** 1.6 - (i - 1) ** 1.6
        brute = float((a2 * 0.2 * 0.8 ** (i - 1)).sum())
        assert val == pytest.approx(brute, rel=1e-10)
