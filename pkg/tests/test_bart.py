import math

import numpy as np
import pytest

from popfind.bart import Design, ForestState, gaussian_loglik, gibbs_sweep, predict, predict_rows, sweep_inplace


class TestGaussianLoglik:
    def test_value(self):
        y = np.array([0.5, -1.0])
        expected = -math.log(2 * math.pi * 2.0) - (0.25 + 1.0) / 4.0
        assert gaussian_loglik(y, np.zeros(2), 2.0) == pytest.approx(expected, abs=1e-14)

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_loglik([0.0], [0.0], 0.0)


class TestLeafUpdate:
    def test_root_only_conjugate_moments(self):
        # max_depth 0 keeps a single root leaf, so each sweep is an exact conjugate draw
        rng = np.random.default_rng(0)
        n, sigma2 = 40, 0.3
        y = rng.normal(0.2, 0.5, size=n)
        design = Design(np.arange(n) % 2, rng.normal(size=(n, 2)))
        st = ForestState.initial(n, 1, max_depth=0)
        tau2 = st.sigma_mu ** 2
        post_var = sigma2 * tau2 / (sigma2 + n * tau2)
        post_mean = tau2 * y.sum() / (sigma2 + n * tau2)
        draws = np.empty(20000)
        for i in range(len(draws)):
            sweep_inplace(st, y, design, sigma2, rng)
            draws[i] = st.leaf[0, 0]
        assert np.all(st.status[0, 1:] == 0)
        se = math.sqrt(post_var / len(draws))
        assert abs(draws.mean() - post_mean) < 4 * se
        assert draws.var() == pytest.approx(post_var, rel=0.05)


class TestTreePrior:
    def test_root_split_rate_under_flat_likelihood(self):
        # every x value appears in both arms, so no rectangle is empty and the prior is not truncated
        x = np.repeat(np.arange(100.0), 2)
        z = np.tile([0, 1], 100)
        design = Design(z, x[:, None])
        st = ForestState.initial(len(x), 1)
        rng = np.random.default_rng(1)
        y = np.zeros(len(x))
        split = 0
        R = 40000
        for _ in range(R):
            sweep_inplace(st, y, design, 1e12, rng)
            split += st.status[0, 0] == 2
        assert abs(split / R - 0.95) < 0.015


class TestForest:
    def _fit(self, seed=2):
        rng = np.random.default_rng(seed)
        n = 80
        X = rng.normal(size=(n, 3))
        z = np.arange(n) % 2
        y = X[:, 0] + z * (X[:, 1] > 0) + rng.normal(0, 0.3, n)
        design = Design(z, X)
        st = ForestState.for_response(y, 10)
        for _ in range(50):
            sweep_inplace(st, y, design, 0.1, rng)
        return st, design, X, z, y

    def test_deterministic_given_seed(self):
        a = self._fit()[0]
        b = self._fit()[0]
        np.testing.assert_array_equal(a.leaf, b.leaf)
        np.testing.assert_array_equal(a.status, b.status)

    def test_cached_fit_matches_prediction(self):
        st, design, X, z, _ = self._fit()
        np.testing.assert_allclose(st.fitted(), predict_rows(st, z, X), atol=1e-12)
        assert predict(st, z[3], X[3]) == pytest.approx(st.fitted()[3], abs=1e-12)

    def test_fit_cache_agrees_with_leaves(self):
        st, design, *_ = self._fit()
        ref = st.copy()
        ref.bind(design)
        np.testing.assert_allclose(ref.fit, st.fit, atol=1e-10)

    def test_learns_signal(self):
        st, _, X, z, y = self._fit()
        assert np.mean((st.fitted() - y) ** 2) < 0.5 * np.var(y)

    def test_text_round_trip(self):
        st, design, X, z, _ = self._fit()
        back = ForestState.from_text(st.to_text(), design)
        np.testing.assert_array_equal(back.status, st.status)
        np.testing.assert_array_equal(predict_rows(back, z, X), predict_rows(st, z, X))

    def test_gibbs_sweep_leaves_input(self):
        st, design, _, _, y = self._fit()
        before = st.leaf.copy()
        gibbs_sweep(st, y, design, 0.1, np.random.default_rng(9))
        np.testing.assert_array_equal(st.leaf, before)

    def test_no_empty_leaves(self):
        st, *_ = self._fit()
        for t in range(st.m):
            used = set(np.unique(st.node_of[t]))
            assert used == set(np.flatnonzero(st.status[t] == 1))
