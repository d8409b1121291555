import math

import numpy as np
import pytest

from popfind.actions import ALL, NULL, ActionTable, SubgroupAction, enumerate_actions, fit_bins
from popfind.data import PosteriorDraws, TrialDataset
from popfind.decision import (TradeoffSpec, UtilityParams, average_mcmd, label, order_by_utility, pate, pcte_tox,
                              pcte_tte, rank_actions, score_actions, utility, utility_vector)

ONE = SubgroupAction("one", (0,), (frozenset({2}),))


def _dataset(n=90, p=2, seed=0, tox=True):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    return TrialDataset(z=np.arange(n) % 2, X=X, y_obs_log=rng.normal(3, 1, n), gamma=np.ones(n, int),
                        y_tox=(rng.random(n) < 0.3).astype(int) if tox else None)


def _draws(data, effect, D=40, seed=1, sigma2=1.0):
    """Hand-built draws: arm N mean = arm C mean + effect(x)."""
    rng = np.random.default_rng(seed)
    base = 3.0 + 0.1 * rng.normal(size=(D, data.n))
    eff = np.broadcast_to(effect, (data.n,))
    return PosteriorDraws(mean0=base, mean1=base + eff, sigma2=np.full(D, sigma2),
                          residuals=rng.normal(0, math.sqrt(sigma2), size=(D, data.n)), burn_in=0, thin=1,
                          seed=0, X=np.asarray(data.X), pt_depth=4, pt_c=5.0)


class TestScalars:
    def test_mcmd_worked_example(self):
        assert average_mcmd(0.2, TradeoffSpec(0.2, 1.5)) == pytest.approx(0.5, abs=1e-12)

    def test_mcmd_no_tox_slope(self):
        assert average_mcmd(0.9, TradeoffSpec(0.2, 0.0)) == 0.2

    def test_utility_hand_value(self):
        u = utility(ONE, 0.4, 0.2, 99, UtilityParams(0.25, 0.15))
        assert abs(u - 0.2 * 100 ** 0.25 / 2 ** 0.15) < 1e-12
        assert round(u, 3) == 0.570

    def test_null_scores_u0(self):
        assert utility(NULL, 0.9, 0.0, 400, UtilityParams(u0=-0.304)) == -0.304

    def test_zero_benefit(self):
        assert utility(ONE, 0.3, 0.3, 250, UtilityParams()) == 0.0

    def test_all_has_no_parsimony_penalty(self):
        assert utility(ALL, 0.5, 0.2, 99, UtilityParams()) == pytest.approx(0.3 * 100 ** 0.25)

    def test_monotone_in_size(self):
        p = UtilityParams()
        up = utility_vector(np.full(5, 0.4), 0.2, np.arange(5) * 50, np.ones(5), p)
        down = utility_vector(np.full(5, 0.1), 0.2, np.arange(5) * 50, np.ones(5), p)
        assert np.all(np.diff(up) > 0) and np.all(np.diff(down) < 0)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            UtilityParams(nu=0.0)
        with pytest.raises(ValueError):
            TradeoffSpec(delta0=-0.1)


class TestPate:
    def test_all_is_mean(self):
        d = _dataset()
        bins = fit_bins(d)
        v = np.random.default_rng(2).random(d.n)
        assert pate(ALL, v, d.X, bins) == pytest.approx(v.mean(), abs=1e-14)

    def test_constant_effect(self):
        d = _dataset()
        bins = fit_bins(d)
        for a in enumerate_actions(bins)[1:40]:
            assert pate(a, np.full(d.n, 0.3), d.X, bins) == pytest.approx(0.3, abs=1e-14)

    def test_null_rejected(self):
        d = _dataset()
        with pytest.raises(ValueError):
            pate(NULL, np.zeros(d.n), d.X, fit_bins(d))

    def test_table_agrees_with_scalar_path(self):
        d = _dataset()
        bins = fit_bins(d)
        acts = enumerate_actions(bins)
        table = ActionTable(acts, bins)
        v = np.random.default_rng(3).normal(size=d.n)
        U, p_tte, *_ = score_actions(table, bins.codes(d.X), v, None, TradeoffSpec(), UtilityParams())
        for i in (1, 3, 9, 20, len(acts) - 1):
            if not np.isnan(U[i]):
                assert p_tte[i] == pytest.approx(pate(acts[i], v, d.X, bins), abs=1e-12)


class TestPcte:
    def test_no_arm_effect_is_zero(self):
        d = _dataset()
        draws = _draws(d, 0.0)
        assert pcte_tte(d.X[0], draws, 20.0) == 0.0

    def test_arm_swap_antisymmetry(self):
        d = _dataset()
        draws = _draws(d, 0.4 * (d.X[:, 0] > 0))
        swapped = PosteriorDraws(mean0=draws.mean1, mean1=draws.mean0, sigma2=draws.sigma2,
                                 residuals=draws.residuals, burn_in=0, thin=1, seed=0, X=draws.X,
                                 pt_depth=draws.pt_depth, pt_c=draws.pt_c)
        for i in range(5):
            assert pcte_tte(d.X[i], swapped, 20.0) == pytest.approx(-pcte_tte(d.X[i], draws, 20.0), abs=1e-14)

    def test_tox_zero_and_sign(self):
        d = _dataset()
        t = _draws(d, 0.0)
        assert pcte_tox(d.X[0], t) == 0.0
        t = _draws(d, 0.5)
        assert pcte_tox(d.X[0], t) > 0


class TestRanking:
    def test_order_tie_rule(self):
        U = np.array([0.1, 0.5, np.nan, 0.5, -1.0])
        np.testing.assert_array_equal(order_by_utility(U), [1, 3, 0, 4])

    def test_null_first_without_arm_effect(self):
        d = _dataset()
        rep = rank_actions(d, fit_bins(d), _draws(d, 0.0), None, TradeoffSpec(0.2), UtilityParams(u0=0.01))
        assert rep.best == NULL

    def test_strong_effect_beats_null(self):
        d = _dataset(300, 2)
        eff = 2.0 * (d.X[:, 0] >= np.quantile(d.X[:, 0], 2 / 3))
        bins = fit_bins(d)
        rep = rank_actions(d, bins, _draws(d, eff), None, TradeoffSpec(0.2, tau=20.0), UtilityParams(u0=0.0))
        assert rep.best != NULL
        assert rep.top[0].pate_tte > 0.2
        utilities = [e.utility for e in rep.entries]
        assert utilities == sorted(utilities, reverse=True)

    def test_delta1_zero_ignores_toxicity(self):
        d = _dataset()
        bins = fit_bins(d)
        tte = _draws(d, 0.3 * (d.X[:, 1] > 0))
        a = rank_actions(d, bins, tte, None, TradeoffSpec(0.2, 0.0), UtilityParams())
        b = rank_actions(d, bins, tte, _draws(d, 1.0, seed=5), TradeoffSpec(0.2, 0.0), UtilityParams())
        assert [e.index for e in a.entries] == [e.index for e in b.entries]

    def test_toxicity_needed_when_delta1_nonzero(self):
        d = _dataset()
        with pytest.raises(ValueError):
            rank_actions(d, fit_bins(d), _draws(d, 0.0), None, TradeoffSpec(0.2, 1.5), UtilityParams())

    def test_toxicity_raises_bar(self):
        d = _dataset()
        bins = fit_bins(d)
        tte = _draws(d, 0.5)
        base = rank_actions(d, bins, tte, _draws(d, 0.0), TradeoffSpec(0.2, 1.5), UtilityParams())
        toxic = rank_actions(d, bins, tte, _draws(d, 0.8), TradeoffSpec(0.2, 1.5), UtilityParams())
        assert toxic.entries[toxic.rank_of(ALL)].deltabar > base.entries[base.rank_of(ALL)].deltabar

    def test_shift_invariance_of_nonnull_order(self):
        U = np.random.default_rng(4).normal(size=50)
        a = [i for i in order_by_utility(U)]
        b = [i for i in order_by_utility(U + 3.0)]
        assert a == b

    def test_report_serialization(self):
        d = _dataset()
        rep = rank_actions(d, fit_bins(d), _draws(d, 0.2), None, TradeoffSpec(), UtilityParams())
        out = rep.to_dict()
        assert sum(r["top"] for r in out["actions"]) == 5
        assert [r["rank"] for r in out["actions"]] == list(range(1, len(out["actions"]) + 1))
        assert len(rep.render().splitlines()) == 6


class TestLabels:
    def test_labels(self):
        d = _dataset()
        bins = fit_bins(d)
        assert label(NULL, bins) == "null (no subgroup)"
        assert label(ALL, bins) == "all patients"
        assert label(SubgroupAction("one", (0,), (frozenset({2}),)), bins) == "x1 ≥ Q67"
        two = SubgroupAction("two", (0, 1), (frozenset({0}), frozenset({1, 2})), "lshape")
        assert " or " in label(two, bins)
