import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tweedie_dglm.diagnostics import (
    aic,
    ess_acf,
    hpd_interval,
    parameter_count,
    point_state,
    predict,
    summarize,
    summarize_chain,
)
from tweedie_dglm.model import ModelState, ObservationSet
from tweedie_dglm.samplers import McmcConfig, run_chain

from conftest import make_problem


def _one_obs(y, x=0.0):
    return ObservationSet(y=[y], t=[1.0], loc=[0], X=[[1.0]], Z=[[1.0]], n_sites=1)


class TestSummarize:
    def test_constant(self):
        s = summarize(np.full(20, 3.0), np.zeros(20))
        assert s.mean[0] == s.median[0] == s.map_estimate[0] == 3.0
        assert s.sd[0] == 0.0
        assert (s.hpd_lower[0], s.hpd_upper[0]) == (3.0, 3.0)

    def test_symmetric(self):
        s = summarize(np.array([-1.0, 0.0, 1.0]), np.zeros(3))
        assert s.mean[0] == 0.0 and s.median[0] == 0.0

    def test_uniform_grid(self):
        draws = np.arange(100) / 100.0
        lo, hi = hpd_interval(draws, 0.95)
        k = math.ceil(0.95 * 100)
        widths = [draws[i + k - 1] - draws[i] for i in range(100 - k + 1)]
        assert hi - lo == pytest.approx(min(widths))
        assert abs((hi - lo) - 0.95) <= 0.01 + 1e-12

    def test_map_is_argmax(self, rng):
        draws = rng.normal(size=(50, 3))
        lp = rng.normal(size=50)
        s = summarize(draws, lp, names=["a", "b", "c"])
        np.testing.assert_array_equal(s.map_estimate, draws[np.argmax(lp)])
        assert s.get("b", "mean") == pytest.approx(draws[:, 1].mean())

    def test_two_pass_oracle(self, rng):
        draws = rng.gamma(2.0, size=(400, 4))
        s = summarize(draws, np.zeros(400))
        for j in range(4):
            col = list(draws[:, j])
            m = sum(col) / len(col)
            var = sum((v - m) ** 2 for v in col) / (len(col) - 1)
            assert s.mean[j] == pytest.approx(m, abs=1e-12)
            assert s.sd[j] == pytest.approx(math.sqrt(var), abs=1e-12)
            assert s.median[j] == pytest.approx(sorted(col)[199] / 2 + sorted(col)[200] / 2, abs=1e-12)

    @given(st.integers(0, 10_000), st.floats(0.5, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_hpd_not_wider_than_equal_tailed(self, seed, prob):
        x = np.random.default_rng(seed).lognormal(size=300)
        lo, hi = hpd_interval(x, prob)
        srt = np.sort(x)
        k = math.ceil(prob * x.size)
        # the equal-tailed window holding the same number of order statistics
        start = (x.size - k) // 2
        assert hi - lo <= srt[start + k - 1] - srt[start] + 1e-12
        assert lo < hi

    def test_errors(self):
        with pytest.raises(ValueError):
            summarize(np.array([1.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            summarize(np.zeros(5), np.zeros(4))

    def test_covers(self):
        s = summarize(np.linspace(0, 1, 101), np.zeros(101))
        np.testing.assert_array_equal(s.covers([0.5]), [True])
        np.testing.assert_array_equal(s.covers([2.0]), [False])


class TestEss:
    def test_iid(self):
        x = np.random.default_rng(1).standard_normal(10_000)
        acf, ess = ess_acf(x)
        assert acf[0] == 1.0
        assert 0.8 <= ess / x.size <= 1.2

    def test_alternating(self):
        acf, ess = ess_acf(np.tile([1.0, -1.0], 50))
        assert acf[1] == pytest.approx(-1.0, abs=1e-12)
        assert 0 < ess <= 100

    def test_ar1(self):
        rng = np.random.default_rng(2)
        rho, n = 0.9, 50_000
        x = np.empty(n)
        x[0] = 0.0
        for i in range(1, n):
            x[i] = rho * x[i - 1] + rng.standard_normal()
        _, ess = ess_acf(x)
        assert ess / n == pytest.approx((1 - rho) / (1 + rho), rel=0.2)

    def test_constant(self):
        with pytest.warns(RuntimeWarning):
            acf, ess = ess_acf(np.ones(20))
        assert ess == 20.0 and acf[0] == 1.0

    def test_too_short(self):
        with pytest.raises(ValueError):
            ess_acf(np.arange(5.0))


class TestAic:
    def test_table_counts(self):
        assert [parameter_count(m, 29, 29, 281) for m in ("M1", "M2", "M3", "M4")] == [59, 175, 343, 459]

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 400))
    def test_symbolic(self, p, q, L):
        assert parameter_count("M1", p, q, L) == p + q + 1
        assert parameter_count("M2", p, q, L) == 3 * p + 3 * q + 1
        assert parameter_count("M3", p, q, L) == p + q + L + 4
        assert parameter_count("M4", p, q, L) == 3 * p + 3 * q + L + 4
        assert parameter_count("M3", p, q, L) - parameter_count("M1", p, q, L) == L + 3

    def test_plug_in(self):
        assert aic(-1000.0, "M1", 29, 29) == 2118.0

    def test_negative(self):
        with pytest.raises(ValueError):
            parameter_count("M1", -1, 2)


class TestPredict:
    def test_single_zero(self):
        state = ModelState(beta=np.zeros(1), gamma=np.zeros(1), xi=1.5)
        mu, phi, score = predict(state, _one_obs(0.0), "M1")
        assert mu[0] == 1.0 and phi[0] == 1.0
        assert score == pytest.approx(2.0, rel=1e-15)

    def test_perfect_fit(self):
        state = ModelState(beta=np.array([0.4]), gamma=np.zeros(1), xi=1.5)
        _, _, score = predict(state, _one_obs(np.exp(0.4)), "M1")
        assert score == pytest.approx(0.0, abs=1e-7)

    def test_monotone_away_from_y(self):
        y = 1.7
        scores = []
        for b in np.linspace(np.log(y), np.log(y) + 3, 40):
            scores.append(predict(ModelState(beta=np.array([b]), gamma=np.zeros(1), xi=1.4), _one_obs(y), "M1")[2])
        assert np.all(np.diff(scores) >= 0)
        scores = []
        for b in np.linspace(np.log(y), np.log(y) - 3, 40):
            scores.append(predict(ModelState(beta=np.array([b]), gamma=np.zeros(1), xi=1.4), _one_obs(y), "M1")[2])
        assert np.all(np.diff(scores) >= 0)

    def test_unseen_location(self):
        obs, _, hyper, state = make_problem(0, model_id="M3")
        with pytest.raises(ValueError, match="not seen"):
            predict(state, obs, "M3", hyper, seen_sites=[0, 1])
        mu, _, _ = predict(state, obs, "M3", hyper)
        assert mu.shape == (obs.n,)


class TestPointState:
    def test_rebuilds_state(self):
        obs, domain, hyper, _ = make_problem(3, N=60, model_id="M4")
        ch = run_chain("M4", obs, domain, hyper, McmcConfig(iters=40, burnin=20, thin=2), seed=1)
        for stat in ("median", "mean", "map"):
            st_ = point_state(ch, stat)
            assert st_.beta.shape == (obs.p,) and st_.w.shape == (obs.n_sites,)
            assert st_.sel_gamma.zeta.shape == (obs.q,)
        np.testing.assert_array_equal(point_state(ch, "mean").beta, ch.block("beta").mean(axis=0))
        with pytest.raises(ValueError):
            point_state(ch, "mode")
        assert len(summarize_chain(ch)) == len(ch.names)
