import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsi_mm import models, nlreg
from evsi_mm.conditional import conditional_from_fitted
from evsi_mm.moment_matching import PosteriorVariancePoint, sqrt_sample_sizes
from evsi_mm.pipeline import run_evsi

# noiseless synthetic observations leave sigma_eps unidentified near zero,
# so its R-hat warning is expected there
pytestmark = pytest.mark.filterwarnings("ignore:split R-hat:RuntimeWarning")

N50 = sqrt_sample_sizes(50, 10, 200).astype(float)


def _synthetic(h=20.0, noise=0.0, sp=1.0, seed=0):
    rng = np.random.default_rng(seed)
    y = sp * N50 / (N50 + h) + noise * sp * rng.standard_normal(N50.size)
    return nlreg.VarianceObservations(N50, y, sp)


def _posterior_at(h_values, sp=1.0):
    h = np.asarray(h_values, dtype=float).reshape(1, -1)
    return nlreg.NlregPosterior(h, np.ones_like(h), sp, np.ones(1), {}, {})


class TestObservations:
    def test_validation(self):
        with pytest.raises(ValueError):
            nlreg.VarianceObservations([0.0, 1.0], [1.0, 1.0], 1.0)
        with pytest.raises(ValueError):
            nlreg.VarianceObservations([1.0, 2.0], [1.0, np.nan], 1.0)
        with pytest.raises(ValueError):
            nlreg.VarianceObservations([1.0, 2.0], [1.0], 1.0)

    def test_from_points(self):
        pts = [PosteriorVariancePoint(1, 10, np.array([[3.0, 1.0], [1.0, 2.0]]))]
        obs = nlreg.VarianceObservations.from_points(np.array([[5.0, 2.0], [2.0, 4.0]]), pts,
                                                     np.array([[4.0, 1.5], [1.5, 3.0]]), 0, 1)
        assert obs.y[0] == 1.0 and obs.sigma_phi == 1.5


class TestFit:
    def test_noiseless_recovery(self):
        post = nlreg.fit_variance_curve(_synthetic(noise=0.0), seed=1)
        assert abs(np.median(post.h_draws) - 20) < 2.0
        assert np.all(post.h_draws > 0) and np.all(post.sigma_draws > 0)
        assert set(post.rhat) == {"h", "sigma_eps"}

    def test_noisy_recovery(self):
        post = nlreg.fit_variance_curve(_synthetic(noise=0.02, seed=3), seed=3)
        lo, hi = np.quantile(post.h_draws, [0.025, 0.975])
        assert lo < 20 < hi
        assert np.all((post.acceptance > 0.1) & (post.acceptance < 0.7))

    def test_saturated_variance(self):
        obs = nlreg.VarianceObservations(N50, np.full(N50.size, 1.0), 1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            post = nlreg.fit_variance_curve(obs, seed=0)
        assert post.degenerate
        assert np.median(post.h_draws) < 0.5

    def test_too_few_points(self):
        obs = nlreg.VarianceObservations([1.0, 2.0], [0.1, 0.2], 1.0)
        with pytest.raises(ValueError):
            nlreg.fit_variance_curve(obs)

    def test_sigma_phi_positive(self):
        obs = _synthetic()
        obs.sigma_phi = 0.0
        with pytest.raises(ValueError):
            nlreg.fit_variance_curve(obs)

    def test_deterministic(self):
        a = nlreg.fit_variance_curve(_synthetic(noise=0.05, seed=2), seed=4)
        b = nlreg.fit_variance_curve(_synthetic(noise=0.05, seed=2), seed=4)
        assert np.array_equal(a.h, b.h) and np.array_equal(a.sigma_eps, b.sigma_eps)

    def test_code_prior_variant(self):
        post = nlreg.fit_variance_curve(_synthetic(noise=0.02, seed=5),
                                        nlreg.PriorConfig(h_variance="code"), seed=5)
        assert post.prior["h_var"] == 2000 * 200
        with pytest.raises(ValueError):
            nlreg.PriorConfig(h_variance="other").h_moments(200)

    def test_poor_mixing_warns(self):
        mcmc = nlreg.McmcConfig(chains=4, burn_in=0, iterations=40)
        with pytest.warns(RuntimeWarning, match="R-hat"):
            post = nlreg.fit_variance_curve(_synthetic(noise=0.3, seed=1), mcmc=mcmc, seed=0)
        assert post.warnings

    def test_toy_end_to_end_h(self):
        res = run_evsi(models.normal_toy_model(0, 1, 1), 1, s=20_000, m=100_000, n_min=5,
                       n_max=200, seed=2, grid=[10])
        assert 0.5 <= np.median(res.posterior.h_draws) <= 2.0


def test_split_rhat():
    rng = np.random.default_rng(0)
    assert nlreg.split_rhat(rng.normal(size=(4, 1000))) < 1.01
    shifted = rng.normal(size=(4, 1000)) + np.arange(4)[:, None] * 5
    assert nlreg.split_rhat(shifted) > 1.5


class TestPredict:
    def test_h_zero(self):
        out = nlreg.predict_sigma_x_quantiles(_posterior_at(np.zeros(10), 2.0), 2.0,
                                              [1.0, 50.0, 1e4])
        np.testing.assert_allclose(out, 2.0)

    def test_half_saturation(self):
        out = nlreg.predict_sigma_x_quantiles(_posterior_at([40.0] * 5), 3.0, 40.0)
        np.testing.assert_allclose(out, 1.5)

    def test_infinite_n(self):
        out = nlreg.predict_sigma_x_quantiles(_posterior_at([5.0, 50.0]), 3.0, np.inf)
        np.testing.assert_allclose(out, 3.0)
        big = nlreg.predict_sigma_x_quantiles(_posterior_at([5.0, 50.0]), 3.0, 1e12)
        np.testing.assert_allclose(big, 3.0, rtol=1e-9)

    def test_level_ordering(self):
        post = _posterior_at(np.linspace(1, 100, 400))
        out = nlreg.predict_sigma_x_quantiles(post, 1.0, [5.0, 50.0])
        assert np.all(np.diff(out, axis=0) >= 0)

    def test_errors(self):
        with pytest.raises(ValueError):
            nlreg.predict_sigma_x_quantiles(_posterior_at([]), 1.0, 5.0)
        with pytest.raises(ValueError):
            nlreg.predict_sigma_x_quantiles(_posterior_at([1.0]), 1.0, -1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(1e-3, 1e4), min_size=1, max_size=30),
           st.floats(0, 1e3), st.floats(0, 1e3), st.floats(1e-3, 1e3))
    def test_monotone_and_bounded(self, h, n1, n2, sp):
        post = _posterior_at(h)
        lo, hi = sorted((n1, n2))
        a = nlreg.predict_sigma_x_quantiles(post, sp, lo)
        b = nlreg.predict_sigma_x_quantiles(post, sp, hi)
        assert np.all(a <= b + 1e-12 * sp)
        assert np.all((0 <= a) & (b <= sp))
        if hi > 0:
            assert np.all(b < sp)


class TestCurve:
    def test_upper_bound_and_monotone(self):
        rng = np.random.default_rng(1)
        fitted = rng.normal(-0.2, 1.0, size=5000)
        cond = conditional_from_fitted(fitted)
        post = nlreg.fit_variance_curve(_synthetic(sp=cond.sigma2_phi, noise=0.01), seed=0)
        curve = nlreg.evsi_curve(post, cond, fitted.mean(), np.arange(10, 201))
        assert curve.evsi.shape == (5, 191)
        assert np.all(curve.evsi <= curve.evppi + 1e-9)
        assert np.all(curve.evsi >= -1e-12)
        assert np.all(np.diff(curve.evsi, axis=1) >= -1e-12)
        assert np.all(np.diff(curve.evsi, axis=0) >= -1e-12)
        assert "not posterior credible intervals" in curve.note
        np.testing.assert_array_equal(curve.level(0.5), curve.evsi[2])

    def test_degenerate_conditional(self):
        cond = conditional_from_fitted(np.full(100, 0.3))
        curve = nlreg.evsi_curve(_posterior_at([10.0]), cond, 0.3, [1, 10, 100])
        assert np.all(curve.evsi == 0)

    def test_empty_grid(self):
        cond = conditional_from_fitted(np.arange(5.0))
        with pytest.raises(ValueError):
            nlreg.evsi_curve(_posterior_at([1.0]), cond, 0.0, [])


class TestMulti:
    def _points(self, sigma_phi, h):
        pts = []
        for q, n in enumerate(N50):
            pts.append(PosteriorVariancePoint(q + 1, int(n), sigma_phi * (1 - n / (n + h))))
        return pts

    def test_two_arm_reduction(self):
        sp = np.array([[2.0]])
        pts = self._points(sp, 15.0)
        fits = nlreg.fit_variance_surface_multi(sp, pts, sp, seed=3)
        assert list(fits) == [(0, 0)]
        obs = nlreg.VarianceObservations.from_points(sp, pts, sp)
        single = nlreg.fit_variance_curve(obs, seed=3)
        assert np.array_equal(fits[(0, 0)].h, single.h)

    def test_three_arm_regressions(self):
        sp = np.array([[2.0, 0.8], [0.8, 1.0]])
        fits = nlreg.fit_variance_surface_multi(sp, self._points(sp, 15.0), sp, seed=1)
        assert sorted(fits) == [(0, 0), (0, 1), (1, 1)]
        sx = nlreg.sigma_x_matrix(fits, sp, 50.0, 0.5)
        assert np.allclose(sx, sx.T)
        np.testing.assert_allclose(sx, sp * 50 / 65, rtol=0.05)

    def test_zero_element(self):
        sp = np.array([[2.0, 0.0], [0.0, 1.0]])
        fits = nlreg.fit_variance_surface_multi(sp, self._points(sp, 15.0), sp, seed=1)
        assert fits[(0, 1)] is None
        assert nlreg.sigma_x_matrix(fits, sp, 10.0, 0.5)[0, 1] == 0.0

    def test_missing_elements(self):
        sp = np.eye(2)
        with pytest.raises(ValueError):
            nlreg.fit_variance_surface_multi(sp, [PosteriorVariancePoint(1, 10, np.eye(1))], sp)

    def test_multi_curve(self):
        rng = np.random.default_rng(0)
        fitted = rng.multivariate_normal([0.1, -0.1], [[1.0, 0.3], [0.3, 0.5]], size=4000)
        cond = conditional_from_fitted(fitted)
        fits = nlreg.fit_variance_surface_multi(cond.cov, self._points(cond.cov, 20.0),
                                                cond.cov, seed=2)
        curve = nlreg.evsi_curve_multi(fits, cond, cond.mean, [10, 50, 200])
        assert np.all(curve.evsi <= curve.evppi + 1e-9)
        assert np.all(np.diff(curve.evsi[2]) >= -1e-12)


def test_residual_diagnostics():
    obs = _synthetic(noise=0.0)
    post = nlreg.fit_variance_curve(obs, seed=0)
    d = nlreg.residual_diagnostics(post, obs)
    assert len(d["residual"]) == 50
    assert np.abs(d["residual"]).max() < 1e-3 * obs.sigma_phi

    obs = _synthetic(noise=0.02, seed=8)
    post = nlreg.fit_variance_curve(obs, seed=8)
    d = nlreg.residual_diagnostics(post, obs)
    s = np.median(post.sigma_draws)
    assert abs(d["residual"].mean()) < 2 * s / np.sqrt(50)
