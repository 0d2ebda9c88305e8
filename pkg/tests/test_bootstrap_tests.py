"""Bootstrap calibration mechanics and the three hypothesis tests."""

import numpy as np
import pytest

from dccox import (GridMismatchError, KernelSpec, SolverConfig, TimeGrid,
                   default_test_grid, fit_curve, scenario_heterogeneity,
                   scenario_temporal, simulate)
from dccox import bootstrap_tests as bt

# aliased so pytest does not collect the library's test_* entry points
run_eta = bt.test_temporal_eta
run_gamma = bt.test_temporal_gamma
run_het = bt.test_degree_heterogeneity

CFG = SolverConfig(gauss_seidel=True, gamma_uses_updated=True)


def _fitted(scn, k, times=None):
    es, zs, _ = simulate(scn)
    times = default_test_grid(es.tau) if times is None else times
    fit = fit_curve(es, zs, k, TimeGrid(times), cfg=CFG)
    return fit, es, zs


@pytest.fixture(scope="module")
def small_null():
    k = KernelSpec("gaussian", h1=0.3, h2=0.2)
    fit, es, zs = _fitted(scenario_temporal(20, 0.0, 0.0, seed=7), k)
    return fit, es, zs, k


class TestHelpers:
    def test_default_grid(self):
        g = default_test_grid(2.0)
        assert np.allclose(g, np.arange(1, 10) * 0.2)

    def test_critical_value_order_statistic(self):
        boot = np.arange(1.0, 100.0)          # 99 replicates
        assert bt._critical_value(boot, 0.05) == 95.0
        assert bt._critical_value(boot, 0.5) == 50.0

    def test_critical_value_infinite_when_b_too_small(self):
        assert bt._critical_value(np.arange(10.0), 0.05) == np.inf

    def test_p_value_counts(self):
        boot = np.array([1.0, 2.0, 3.0, 4.0])
        assert bt._p_value(boot, 2.5) == pytest.approx(3 / 5)
        assert bt._p_value(boot, 5.0) == pytest.approx(1 / 5)
        assert bt._p_value(boot, 0.0) == pytest.approx(1.0)

    def test_p_value_monotone_in_statistic(self):
        rng = np.random.default_rng(0)
        boot = rng.standard_normal(200)
        stats = np.linspace(-2, 2, 9)
        ps = [bt._p_value(boot, s) for s in stats]
        assert all(a >= b for a, b in zip(ps, ps[1:]))

    def test_pairwise_sup_by_hand(self):
        values = np.array([[1.0, 0.0], [3.0, 5.0]])
        var = np.ones((2, 2))
        active = np.ones((2, 2), dtype=bool)
        stat, cmax = bt._pairwise_sup(values, var, active)
        assert stat == pytest.approx(5.0 / np.sqrt(2.0))
        assert cmax == pytest.approx([2.0 / np.sqrt(2.0), 5.0 / np.sqrt(2.0)])

    def test_pairwise_sup_skips_inactive(self):
        values = np.array([[1.0], [100.0], [2.0]])
        var = np.ones((3, 1))
        active = np.array([[True], [False], [True]])
        stat, _ = bt._pairwise_sup(values, var, active)
        assert stat == pytest.approx(1.0 / np.sqrt(2.0))

    def test_pairwise_sup_batch_matches_single(self):
        rng = np.random.default_rng(5)
        values = rng.standard_normal((4, 3, 6))
        var = rng.uniform(0.5, 2.0, size=(3, 6))
        active = rng.uniform(size=(3, 6)) > 0.2
        batch = bt._pairwise_sup_batch(values, var, active)
        singles = [bt._pairwise_sup(v, var, active)[0] for v in values]
        assert np.allclose(batch, singles, atol=1e-12)


class TestBootstrapDraws:
    def test_replicates_independent_of_chunking(self, monkeypatch):
        def work(G):
            return G.sum(axis=1)
        full = bt._bootstrap(3, 150, 40, work)
        monkeypatch.setattr(bt, "_CHUNK", 7)
        assert np.array_equal(bt._bootstrap(3, 150, 40, work), full)

    def test_thread_count_does_not_change_draws(self):
        def work(G):
            return np.abs(G).max(axis=1)
        a = bt._bootstrap(9, 100, 25, work, threads=1)
        b = bt._bootstrap(9, 100, 25, work, threads=4)
        assert np.array_equal(a, b)


_REAL_RNG = np.random.default_rng


class _FlippedRng:
    def __init__(self, seed):
        self._rng = _REAL_RNG(seed)

    def standard_normal(self, *a, **kw):
        return -self._rng.standard_normal(*a, **kw)


class TestSignFlip:
    """Statistics built from |linear(G)| must be invariant under G -> -G."""

    @pytest.mark.parametrize("runner", [
        lambda fit, es, zs, k: run_eta(fit, es, zs, k, n_boot=40, seed=5),
        lambda fit, es, zs, k: run_gamma(fit, es, zs, k, n_boot=40, seed=5),
        lambda fit, es, zs, k: run_het(
            fit, es, zs, k, which="alpha", n_boot=40, seed=5),
    ])
    def test_replicates_equal_under_flip(self, small_null, monkeypatch, runner):
        fit, es, zs, k = small_null
        captured = []
        orig = bt._bootstrap

        def capture(seed, n_boot, n_events, work, threads=None):
            out = orig(seed, n_boot, n_events, work, threads=threads)
            captured.append(out)
            return out

        monkeypatch.setattr(bt, "_bootstrap", capture)
        rep = runner(fit, es, zs, k)
        monkeypatch.setattr(np.random, "default_rng", _FlippedRng)
        rep_flip = runner(fit, es, zs, k)
        assert np.array_equal(captured[0], captured[1])
        assert rep_flip.statistic == rep.statistic
        assert rep_flip.critical_value == rep.critical_value
        assert rep_flip.p_value == rep.p_value


class TestTemporalEta:
    def test_null_not_rejected(self, small_null):
        fit, es, zs, k = small_null
        rep = run_eta(fit, es, zs, k, n_boot=200, seed=1)
        assert rep.name == "temporal-eta"
        assert not rep.reject
        assert rep.p_value > rep.nu
        assert rep.coordinate_max.shape == (2 * es.n - 1,)
        assert rep.statistic == pytest.approx(np.nanmax(rep.coordinate_max))

    def test_strong_alternative_rejected(self):
        k = KernelSpec("gaussian", h1=0.15, h2=0.15)
        fit, es, zs = _fitted(scenario_temporal(20, 2.0, 0.0, seed=3), k)
        rep = run_eta(fit, es, zs, k, n_boot=200, seed=1)
        assert rep.reject
        assert rep.p_value <= 0.05

    def test_deterministic_across_threads(self, small_null):
        fit, es, zs, k = small_null
        reps = [run_eta(fit, es, zs, k, n_boot=60, seed=2, threads=th)
                for th in (1, 4)]
        assert reps[0].statistic == reps[1].statistic
        assert reps[0].critical_value == reps[1].critical_value
        assert reps[0].p_value == reps[1].p_value

    def test_seed_changes_bootstrap(self, small_null):
        fit, es, zs, k = small_null
        a = run_eta(fit, es, zs, k, n_boot=60, seed=2)
        b = run_eta(fit, es, zs, k, n_boot=60, seed=3)
        assert a.statistic == b.statistic
        assert a.critical_value != b.critical_value

    def test_needs_two_times(self, small_null):
        fit, es, zs, k = small_null
        with pytest.raises(GridMismatchError):
            run_eta(fit, es, zs, k, pair_grid=[0.5], n_boot=10)

    def test_uncovered_time_rejected(self, small_null):
        fit, es, zs, k = small_null
        with pytest.raises(GridMismatchError):
            run_eta(fit, es, zs, k, pair_grid=[0.123, 0.5], n_boot=10)


class TestTemporalGamma:
    def test_null_not_rejected(self, small_null):
        fit, es, zs, k = small_null
        rep = run_gamma(fit, es, zs, k, n_boot=200, seed=1)
        assert not rep.reject
        assert rep.coordinate_max.shape == (zs.p,)

    def test_strong_alternative_rejected(self):
        k = KernelSpec("gaussian", h1=0.2, h2=0.1)
        fit, es, zs = _fitted(scenario_temporal(20, 0.0, 3.0, seed=3), k)
        rep = run_gamma(fit, es, zs, k, n_boot=200, seed=1)
        assert rep.reject

    def test_requires_covariates(self):
        from conftest import random_instance
        k = KernelSpec("gaussian", h1=0.3, h2=0.3)
        es, zs = random_instance(n=5, p=0, seed=2, m=120)
        times = default_test_grid(es.tau)
        fit = fit_curve(es, zs, k, TimeGrid(times), cfg=CFG)
        with pytest.raises(ValueError):
            run_gamma(fit, es, zs, k, n_boot=10)


class TestDegreeHeterogeneity:
    def test_null_not_rejected(self):
        k = KernelSpec("gaussian", h1=0.25, h2=0.15)
        fit, es, zs = _fitted(scenario_heterogeneity(20, 0.0, seed=11), k)
        rep = run_het(fit, es, zs, k, which="alpha",
                                        n_boot=200, seed=1)
        assert rep.name == "degree-heterogeneity-alpha"
        assert not rep.reject
        assert rep.coordinate_max.shape == (es.n * (es.n - 1) // 2,)

    def test_strong_alternative_rejected(self):
        k = KernelSpec("gaussian", h1=0.25, h2=0.15)
        fit, es, zs = _fitted(scenario_heterogeneity(20, 3.0, seed=11), k)
        rep = run_het(fit, es, zs, k, which="alpha",
                                        n_boot=200, seed=1)
        assert rep.reject

    def test_beta_direction_runs(self):
        k = KernelSpec("gaussian", h1=0.25, h2=0.15)
        fit, es, zs = _fitted(scenario_heterogeneity(12, 0.0, seed=4), k)
        rep = run_het(fit, es, zs, k, which="beta",
                                        n_boot=60, seed=1)
        assert rep.name == "degree-heterogeneity-beta"
        assert np.isfinite(rep.statistic)

    def test_invalid_direction(self, small_null):
        fit, es, zs, k = small_null
        with pytest.raises(ValueError):
            run_het(fit, es, zs, k, which="eta", n_boot=10)


class TestReportSummary:
    def test_summary_text(self, small_null):
        fit, es, zs, k = small_null
        rep = run_eta(fit, es, zs, k, n_boot=40, seed=1)
        text = rep.summary()
        assert "temporal-eta" in text
        assert ("reject" in text) or ("fail to reject" in text)
        assert f"{rep.p_value:.4g}" in text
