
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tweedie_dglm.model import SpikeSlabLatents
from tweedie_dglm.selection import fdr_select, gibbs_spike_slab, local_fdr, slab_probability


def _draws_from_p(p, M=1000):
    """Draws whose local FDR at c=0.05 equals p (given as multiples of 1/M)."""
    cols = []
    for pu in p:
        k = int(round(pu * M))
        cols.append(np.r_[np.zeros(k), np.ones(M - k)])
    return np.column_stack(cols)


def _brute_force(p, alpha):
    order = np.sort(p)
    best = None
    for u in range(1, p.size + 1):
        if sum(order[:u]) / u <= alpha:
            best = order[u - 1]
    if best is None:
        return np.zeros(p.size, dtype=bool)
    return p <= best


class TestSlabProbability:
    def test_two_point_example(self):
        assert slab_probability(0.0, 1.0, 0.5, 0.25) == pytest.approx(1.0 / 3.0, rel=1e-14)

    def test_large_coefficient(self):
        assert slab_probability(50.0, 1.0, 0.5, 5e-4) == 1.0

    def test_empirical_frequency(self):
        rng = np.random.default_rng(1)
        lat = SpikeSlabLatents(np.ones(1), np.array([0.8]), 0.4)
        coef = np.array([0.05])
        target = slab_probability(coef, lat.sigma2_coef, lat.alpha, 0.01)[0]
        n = 100_000
        hits = sum(gibbs_spike_slab(coef, lat, 0.01, 2.0, 1.0, rng).zeta[0] == 1.0 for _ in range(n))
        assert abs(hits / n - target) < 0.005


class TestGibbsSweep:
    def test_zeta_values(self, rng):
        lat = SpikeSlabLatents.initial(6)
        out = gibbs_spike_slab(rng.normal(size=6), lat, 5e-4, 2.0, 1.0, rng)
        assert set(np.unique(out.zeta)) <= {5e-4, 1.0}
        assert np.all(out.sigma2_coef > 0) and 0 < out.alpha < 1
        np.testing.assert_array_equal(lat.zeta, 1.0)

    def test_alpha_beta_posterior(self):
        # with large coefficients every zeta is 1, so alpha ~ Beta(11, 1)
        rng = np.random.default_rng(2)
        coefs = np.full(10, 40.0)
        lat = SpikeSlabLatents.initial(10)
        alphas = []
        for _ in range(4000):
            out = gibbs_spike_slab(coefs, lat, 5e-4, 2.0, 1.0, rng)
            assert np.all(out.zeta == 1.0)
            alphas.append(out.alpha)
        assert stats.kstest(alphas, stats.beta(11, 1).cdf).pvalue > 0.01

    def test_precision_posterior(self):
        # coef = 0 removes the quadratic term: precision ~ Gamma(a + 1/2, b)
        rng = np.random.default_rng(3)
        lat = SpikeSlabLatents(np.ones(1), np.ones(1), 0.5)
        prec = [1.0 / gibbs_spike_slab(np.zeros(1), lat, 5e-4, 2.0, 1.0, rng).sigma2_coef[0] for _ in range(4000)]
        assert stats.kstest(prec, stats.gamma(2.5, scale=1.0).cdf).pvalue > 0.01


class TestFdrSelect:
    def test_worked_example(self):
        rep = fdr_select(_draws_from_p([0.01, 0.02, 0.20, 0.90]), c=0.05, alpha_level=0.05)
        np.testing.assert_allclose(rep.p, [0.01, 0.02, 0.20, 0.90])
        assert rep.kappa_alpha == pytest.approx(0.02)
        np.testing.assert_array_equal(rep.selected, [True, True, False, False])

    def test_strong_signal(self):
        draws = np.column_stack([np.full(50, 3.0), np.zeros(50)])
        for alpha in (0.001, 0.05, 0.5):
            rep = fdr_select(draws, alpha_level=alpha)
            assert rep.p[0] == 0.0 and rep.selected[0]

    def test_pure_null(self):
        rep = fdr_select(np.zeros((30, 4)), alpha_level=0.5)
        np.testing.assert_array_equal(rep.p, 1.0)
        assert not rep.selected.any()
        assert np.isnan(rep.kappa_alpha)

    def test_boundary_is_inclusive(self):
        draws = _draws_from_p([0.05, 0.05], M=100)
        assert fdr_select(draws, alpha_level=0.05).selected.all()

    def test_names(self):
        rep = fdr_select(_draws_from_p([0.0, 1.0]), names=("a", "b"))
        assert rep.selected_names() == ["a"]

    def test_errors(self):
        with pytest.raises(ValueError):
            fdr_select(np.empty((0, 3)))
        with pytest.raises(ValueError):
            fdr_select(np.zeros((5, 2)), c=0.0)

    def test_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            m = int(rng.integers(1, 13))
            p = rng.integers(0, 101, m) / 100.0
            alpha = float(rng.uniform(0.01, 0.5))
            rep = fdr_select(_draws_from_p(p, M=100), alpha_level=alpha)
            np.testing.assert_array_equal(rep.selected, _brute_force(p, alpha))

    @given(st.lists(st.integers(0, 100), min_size=1, max_size=12),
           st.floats(0.01, 0.5), st.floats(0.01, 0.5))
    @settings(max_examples=200, deadline=None)
    def test_alpha_monotone(self, counts, a1, a2):
        lo, hi = sorted((a1, a2))
        draws = _draws_from_p(np.array(counts) / 100.0, M=100)
        small = fdr_select(draws, alpha_level=lo).selected
        large = fdr_select(draws, alpha_level=hi).selected
        assert not np.any(small & ~large)

    @given(st.integers(0, 10_000), st.floats(0.001, 1.0), st.floats(0.001, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_c_monotone(self, seed, c1, c2):
        lo, hi = sorted((c1, c2))
        draws = np.random.default_rng(seed).normal(0.2, 0.5, size=(50, 6))
        assert np.all(local_fdr(draws, lo) <= local_fdr(draws, hi))
