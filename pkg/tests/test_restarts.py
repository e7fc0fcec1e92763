import math

import numpy as np
import pytest

from swarch.core import InverseGamma, ModelParams, Point
from swarch.empirics import ReturnSeries
from swarch.errors import WindowTooWide
from swarch.restarts import (
    detect_restarts,
    longmem_vol_samples,
    reconstruct_endogenous,
    restart_posterior,
    restart_posterior_series,
)
from swarch.simulate import SeedSpec, sample_returns

M63_PARAMS = ModelParams(D=0.16, nu=0.004, mixture=InverseGamma(5.5, 0.14), M=63)


def brute_posterior(x_window, tau, params, i_max=400):
    """Direct Bayes over (initial index, pattern) with none of the library code."""
    w = 2 * tau + 1
    nu, D = params.nu, params.D
    mix = params.mixture
    a = np.sqrt(np.diff(np.arange(0.0, i_max + w + 1) ** (2 * D)))
    a[0] = 1.0
    num = den = 0.0
    for i in range(1, i_max + 1):
        for bits in range(2 ** (w - 1)):
            idx = [i]
            prob = nu * (1 - nu) ** (i - 1)
            for step in range(w - 1):
                if (bits >> step) & 1:
                    idx.append(1)
                    prob *= nu
                else:
                    idx.append(idx[-1] + 1)
                    prob *= 1 - nu
            av = a[np.array(idx) - 1]
            if isinstance(mix, InverseGamma):
                ssq = float(np.sum((x_window / (av * mix.beta)) ** 2))
                dens = (1 + ssq) ** (-(mix.alpha + w) / 2) / av.prod()
            else:
                ssq = float(np.sum((x_window / (av * mix.sigma0)) ** 2))
                dens = math.exp(-ssq / 2) / av.prod()
            weight = prob * dens
            den += weight
            if idx[tau] == 1:
                num += weight
    return num / den


class TestRestartPosterior:
    def test_certain_restart_gives_probability_one(self):
        params = ModelParams(D=0.2, nu=1.0, mixture=InverseGamma(4.0, 0.1), M=21)
        rs = ReturnSeries(np.random.default_rng(0).standard_normal(50) * 0.1)
        assert restart_posterior(rs, 10, 2, params) == 1.0

    def test_matches_brute_force_enumeration(self):
        params = ModelParams(D=0.25, nu=0.3, mixture=InverseGamma(4.5, 0.1), M=21)
        rng = np.random.default_rng(7)
        rs = ReturnSeries(0.1 * rng.standard_normal(9))
        for t in (2, 4, 6):
            got = restart_posterior(rs, t, 2, params)
            expected = brute_posterior(rs.values[t - 2 : t + 3], 2, params)
            assert 0.0 <= got <= 1.0
            assert got == pytest.approx(expected, abs=1e-12)

    def test_matches_brute_force_null_model(self):
        params = ModelParams(D=0.2, nu=0.25, mixture=Point(0.5), M=21)
        rng = np.random.default_rng(13)
        rs = ReturnSeries(0.4 * rng.standard_normal(9))
        got = restart_posterior(rs, 4, 2, params)
        expected = brute_posterior(rs.values[2:7], 2, params)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_series_matches_scalar(self):
        params = ModelParams(D=0.21, nu=0.05, mixture=InverseGamma(4.0, 0.04), M=21)
        path = sample_returns(params, 60, SeedSpec(3))
        rs = ReturnSeries(path.x)
        series = restart_posterior_series(rs, 2, params)
        assert np.all(np.isnan(series[:2])) and np.all(np.isnan(series[-2:]))
        for t in (2, 17, 40, 57):
            assert series[t] == pytest.approx(
                restart_posterior(rs, t, 2, params), abs=1e-10
            )

    def test_window_guard(self):
        params = ModelParams(D=0.2, nu=0.05, mixture=InverseGamma(4.0, 0.1), M=4)
        rs = ReturnSeries(np.random.default_rng(0).standard_normal(50))
        with pytest.raises(WindowTooWide):
            restart_posterior(rs, 10, 3, params)  # 2*3+1 = 7 > M+1 = 5

    def test_shift_stability(self):
        params = ModelParams(D=0.21, nu=0.05, mixture=InverseGamma(4.0, 0.04), M=21)
        path = sample_returns(params, 300, SeedSpec(11))
        rs_full = ReturnSeries(path.x)
        rs_cut = ReturnSeries(path.x[7:])
        full = restart_posterior_series(rs_full, 2, params)
        cut = restart_posterior_series(rs_cut, 2, params)
        np.testing.assert_allclose(full[7 + 2 : -2], cut[2:-2], rtol=1e-12)


class TestDetectRestarts:
    def test_certain_restart_selects_everything(self):
        params = ModelParams(D=0.2, nu=1.0, mixture=InverseGamma(4.0, 0.1), M=21)
        T, tau = 40, 2
        rs = ReturnSeries(0.1 * np.random.default_rng(1).standard_normal(T))
        diag = detect_restarts(rs, params, tau)
        assert len(diag.restart_times) == T - 2 * tau
        assert diag.threshold == 1.0

    def test_count_rule_on_pure_noise(self):
        params = ModelParams(D=0.21, nu=0.01, mixture=InverseGamma(4.0, 0.04), M=21)
        rs = ReturnSeries(0.02 * np.random.default_rng(2).standard_normal(500))
        diag = detect_restarts(rs, params, 2)
        assert len(diag.restart_times) == math.ceil(0.01 * 500)

    def test_below_one_expected_restart_selects_none(self):
        params = ModelParams(D=0.21, nu=0.001, mixture=InverseGamma(4.0, 0.04), M=21)
        rs = ReturnSeries(0.02 * np.random.default_rng(2).standard_normal(500))
        diag = detect_restarts(rs, params, 2)
        assert len(diag.restart_times) == 0

    def test_posterior_is_informative_about_true_restarts(self):
        path = sample_returns(M63_PARAMS, 4000, SeedSpec(21))
        rs = ReturnSeries(path.x)
        post = restart_posterior_series(rs, 2, M63_PARAMS)
        true_restarts = np.nonzero(path.i == 1)[0]
        true_restarts = true_restarts[(true_restarts >= 2) & (true_restarts < 3998)]
        assert len(true_restarts) >= 5
        at_truth = np.nanmean(post[true_restarts])
        overall = np.nanmean(post)
        assert at_truth > 5 * overall


class TestReconstruction:
    def test_inverts_simulation_given_true_restarts(self):
        path = sample_returns(M63_PARAMS, 5000, SeedSpec(9))
        rs = ReturnSeries(path.x)
        true_restarts = np.nonzero(path.i == 1)[0]
        i_path, y_path = reconstruct_endogenous(rs, true_restarts, M63_PARAMS.D)
        first = true_restarts.min()
        np.testing.assert_array_equal(i_path[first:], path.i[first:])
        np.testing.assert_allclose(y_path[first:], path.y[first:], rtol=1e-12)

    def test_restart_everywhere_gives_identity(self):
        rng = np.random.default_rng(4)
        rs = ReturnSeries(rng.standard_normal(100))
        i_path, y_path = reconstruct_endogenous(rs, np.arange(100), 0.21)
        assert np.all(i_path == 1)
        np.testing.assert_array_equal(y_path, rs.values)

    def test_half_exponent_strips_nothing(self):
        rng = np.random.default_rng(5)
        rs = ReturnSeries(rng.standard_normal(100))
        _, y_path = reconstruct_endogenous(rs, np.array([10, 50]), 0.5)
        np.testing.assert_allclose(y_path, rs.values, rtol=1e-15)

    def test_prefix_starts_at_one(self):
        rs = ReturnSeries(np.ones(10))
        i_path, _ = reconstruct_endogenous(rs, np.array([5]), 0.2)
        np.testing.assert_array_equal(i_path, [1, 2, 3, 4, 5, 1, 2, 3, 4, 5])


class TestLongmemVolSamples:
    def test_constant_series(self):
        samples = longmem_vol_samples(np.full(50, 0.7), np.array([]), 5)
        assert samples.t == 5
        np.testing.assert_allclose(samples.samples, 0.7, rtol=1e-12)

    def test_window_count(self):
        out = longmem_vol_samples(np.arange(1.0, 11.0), np.array([]), 4)
        assert len(out.samples) == 7
        expected = math.sqrt(np.mean(np.arange(1.0, 5.0) ** 2))
        assert out.samples[0] == pytest.approx(expected, rel=1e-12)

    def test_window_guard(self):
        with pytest.raises(ValueError):
            longmem_vol_samples(np.ones(10), np.array([]), 11)
