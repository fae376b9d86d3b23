import numpy as np
import pytest

from evsi_mm import models, pipeline
from evsi_mm.oracle import closed_form_toy_evsi


def _counting_toy():
    base = models.normal_toy_model(0.2, 1.0, 1.0)
    calls = []

    def counting(theta, lam):
        calls.append(len(theta))
        return base.nb_function(theta, lam)

    spec = models.ModelSpec("normal-toy", base.parameter_names, base.prior_mean, base.prior_cov,
                            2, 1.0, counting, exercises=base.exercises)
    return spec, calls


def test_budget_is_counted_exactly():
    spec, calls = _counting_toy()
    res = pipeline.run_evsi(spec, 1, s=5000, q=20, n_min=5, n_max=100, m=300, seed=1,
                            grid=[5, 50])
    b = res.budget
    assert sum(calls) == b["model_evaluations"] == 5000 + 20 * 300
    assert b["posterior_updates"] == 20
    assert b["model_evaluations"] == b["psa_evaluations"] + b["posterior_evaluations"]


def test_resumed_points_cost_nothing():
    spec, calls = _counting_toy()
    first = pipeline.run_evsi(spec, 1, s=2000, q=10, n_min=5, n_max=100, m=200, seed=2,
                              grid=[5, 50])
    calls.clear()
    again = pipeline.run_evsi(spec, 1, s=2000, q=10, n_min=5, n_max=100, m=200, seed=2,
                              grid=[5, 50], points=first.points)
    assert sum(calls) == 2000 and again.budget["posterior_evaluations"] == 0
    assert np.array_equal(first.curve.evsi, again.curve.evsi)


def test_toy_curve_close_to_closed_form():
    res = pipeline.run_evsi(models.normal_toy_model(0.0, 1.0, 1.0), 1, s=50_000, q=50,
                            n_min=5, n_max=200, m=50_000, seed=7, grid=[5, 25, 100])
    exact = [closed_form_toy_evsi(0.0, 1.0, 1.0, n) for n in (5, 25, 100)]
    np.testing.assert_allclose(res.curve.level(0.5), exact, rtol=0.05)
    assert res.dual


def test_default_grid_and_provenance():
    res = pipeline.run_evsi(models.normal_toy_model(), 1, s=2000, q=10, n_min=3, n_max=30,
                            m=100, seed=0)
    np.testing.assert_array_equal(res.curve.grid, np.arange(3, 31))
    assert res.curve.provenance["seed"] == 0 and res.curve.provenance["q"] == 10


def test_fitted_values_shape_checked():
    spec = models.normal_toy_model()
    draws, inb, _ = pipeline.run_psa(spec, 100, 0)
    from evsi_mm.conditional import conditional_from_fitted
    with pytest.raises(ValueError, match="do not match"):
        pipeline.run_evsi(spec, 1, s=200, q=5, m=10, conditional=conditional_from_fitted(
            inb.values), seed=0)


def test_stream_seeds_differ():
    rec = pipeline.seed_record(5)
    assert len({rec["psa"], rec["design"], rec["mcmc"]}) == 3
    assert pipeline.stream(5, 1) == pipeline.stream(5, 1)


def test_run_oracle():
    spec = models.normal_toy_model()
    out = pipeline.run_oracle(spec, 1, [2, 8], s_out=300, m_in=50, seed=1)
    assert [n for n, _ in out] == [2, 8]
    with pytest.raises(ValueError):
        pipeline.run_oracle(spec, 1, [])


class TestCompare:
    grid = np.arange(1, 101, dtype=float)

    def test_zero_cost_picks_largest(self):
        (d,) = pipeline.compare_designs([("a", self.grid, self.grid / (self.grid + 10), 0, 0, 1)])
        assert d.optimal_n == 100 and not d.never_worthwhile

    def test_never_worthwhile(self):
        evsi = self.grid / (self.grid + 10)
        (d,) = pipeline.compare_designs([("a", self.grid, evsi, 2.0, 0, 1)])
        assert d.never_worthwhile

    def test_synthetic_optimum(self):
        evsi = self.grid / (self.grid + 10)
        (d,) = pipeline.compare_designs([("a", self.grid, evsi, 0.0, 0.02, 1.0)])
        net = evsi - 0.02 * self.grid
        assert d.optimal_n == self.grid[np.argmax(net)] == 12
        np.testing.assert_allclose(d.net_value, net)

    def test_ties_pick_smallest(self):
        (d,) = pipeline.compare_designs([("a", [1, 2, 3], [0.0, 1.0, 1.0], 0, 0, 1)])
        assert d.optimal_n == 2

    def test_order_invariant(self):
        a = ("a", self.grid, np.sqrt(self.grid), 1.0, 0.05, 2.0)
        b = ("b", self.grid, np.log1p(self.grid), 0.5, 0.01, 1.0)
        ab = {d.label: d.optimal_n for d in pipeline.compare_designs([a, b])}
        ba = {d.label: d.optimal_n for d in pipeline.compare_designs([b, a])}
        assert ab == ba

    def test_mismatched_grid(self):
        with pytest.raises(ValueError, match="different sample-size grid"):
            pipeline.compare_designs([("a", [1, 2], [0, 0], 0, 0, 1),
                                      ("b", [1, 3], [0, 0], 0, 0, 1)])
        with pytest.raises(ValueError):
            pipeline.compare_designs([])
