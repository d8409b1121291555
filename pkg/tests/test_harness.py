import math

import numpy as np
import pytest

from popfind.aft import SamplerConfig
from popfind.harness import (SimConfig, action_table, null_statistic, replicate_seeds, run_replicate,
                             run_replicates, summarize, top_with_null, true_subgroup, tune_u0)
from popfind.scenarios import calibrate_scenario, scenario
from popfind.toxicity import ToxConfig

# three hand-built replicates; action 6 plays the true subgroup
FIXTURE = [
    {"index": 0, "top": [[6, 0.5], [1, 0.4], [2, 0.3], [3, 0.2], [4, 0.1]]},
    {"index": 1, "top": [[1, 0.2], [2, -0.1], [3, -0.2], [4, -0.3], [5, -0.4]]},
    {"index": 2, "top": [[7, 0.3], [8, 0.2], [9, 0.1], [10, 0.05], [11, 0.01]]},
]

FAST = SimConfig(sampler=SamplerConfig(iterations=40, burn_in=20, thin=2, n_trees=5),
                 tox=ToxConfig(iterations=40, burn_in=20, thin=2, n_trees=5), mc_size=100_000)


class TestTopWithNull:
    def test_insertion(self):
        assert top_with_null(FIXTURE[1], 0.0) == [1, 0, 2, 3, 4]
        assert top_with_null(FIXTURE[0], 0.0) == [6, 1, 2, 3, 4]

    def test_null_wins_ties(self):
        assert top_with_null(FIXTURE[0], 0.3) == [6, 1, 0, 2, 3]


class TestSummarize:
    def test_subgroup_truth(self):
        oc = summarize(FIXTURE, 6, 0.0, hypothesis="Ha")
        assert oc.rates["TSR"] == pytest.approx(1 / 3)
        assert oc.rates["FNR"] == pytest.approx(1 / 3)
        assert oc.rates["FPR"] == pytest.approx(1 / 3)
        assert oc.rates["FSR"] == pytest.approx(1 / 3)
        assert oc.rates["FDR"] == pytest.approx(1.0)

    def test_null_truth(self):
        oc = summarize(FIXTURE, 0, 0.0, hypothesis="H0")
        assert oc.rates["TNR"] == pytest.approx(1 / 3)
        assert oc.rates["T1E"] == pytest.approx(2 / 3)

    def test_all_truth(self):
        oc = summarize(FIXTURE, 1, 0.0, hypothesis="H1")
        assert oc.rates["TPR"] == pytest.approx(2 / 3)
        assert oc.rates["FNR"] == 0.0
        assert oc.rates["FSR"] == pytest.approx(1 / 3)

    def test_hypothesis_from_table(self):
        t = action_table(10)
        assert summarize(FIXTURE, 0, 0.0, t).hypothesis == "H0"
        assert summarize(FIXTURE, 1, 0.0, t).hypothesis == "H1"
        assert summarize(FIXTURE, 6, 0.0, t).hypothesis == "Ha"

    def test_single_replicate_rates_binary(self):
        for truth in (0, 1, 6):
            for u0 in (-1.0, 0.0, 1.0):
                oc = summarize(FIXTURE[:1], truth, u0, action_table(10))
                assert all(v in (0.0, 1.0) for v in oc.rates.values())

    def test_failed_replicates_excluded(self):
        oc = summarize(FIXTURE + [{"index": 3, "error": "boom"}], 6, 0.0, hypothesis="Ha")
        assert oc.reps == 3 and oc.n_failed == 1


class TestTuneU0:
    def _records(self, R=200, seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for i in range(R):
            u = np.sort(rng.normal(size=6))[::-1]
            out.append({"index": i, "top": [[j + 2, float(v)] for j, v in enumerate(u[:5])]})
        return out

    def test_controls_type_one_error(self):
        recs = self._records()
        u0 = tune_u0(recs, 0.05)
        assert summarize(recs, 0, u0, hypothesis="H0").rates["T1E"] <= 0.05 + 1e-12
        # any smaller order statistic breaks the target
        stats = np.sort([null_statistic(r) for r in recs])
        lower = stats[stats < u0].max()
        assert summarize(recs, 0, lower, hypothesis="H0").rates["T1E"] > 0.05

    def test_scale_equivariance(self):
        recs = self._records()
        doubled = [{"index": r["index"], "top": [[i, 2 * u] for i, u in r["top"]]} for r in recs]
        assert tune_u0(doubled, 0.05) == pytest.approx(2 * tune_u0(recs, 0.05))

    def test_degenerate_target(self):
        assert tune_u0(self._records(), 1.0) == -math.inf

    def test_too_few_replicates(self):
        with pytest.raises(ValueError):
            tune_u0(self._records(10), 0.05)


class TestTruth:
    @pytest.mark.parametrize("sid,expected", [("0", "null"), ("E1", "all"), ("E2", "x1:M2M3")])
    def test_argmax(self, sid, expected):
        cfg = SimConfig()
        spec = calibrate_scenario(scenario(sid, d_surv=0.40))
        a, i = true_subgroup(spec, 400, 10, cfg.tradeoff(spec), cfg.params(0.01))
        assert a.encode() == expected


class TestReplicates:
    @pytest.fixture(scope="class")
    @classmethod
    def spec(cls):
        return calibrate_scenario(scenario("E2*T1"), 100_000)

    def test_seeds_independent_of_other_indices(self):
        a = replicate_seeds(5, 3)
        b = replicate_seeds(5, 3)
        assert a[1:] == b[1:]
        assert a[0].random() == b[0].random()
        assert replicate_seeds(5, 4)[1] != a[1]

    def test_record_and_determinism(self, spec):
        r1 = run_replicate(spec, 60, 10, 0.1, FAST, 7, 0)
        r2 = run_replicate(spec, 60, 10, 0.1, FAST, 7, 0)
        assert r1["top"] == r2["top"] and len(r1["top"]) == 5
        assert r1["n_censored"] == 6
        us = [u for _, u in r1["top"]]
        assert us == sorted(us, reverse=True)
        assert all(i != 0 for i, _ in r1["top"])

    def test_checkpoint_resume(self, spec, tmp_path):
        first = run_replicates(spec, 60, 10, 2, 0.1, FAST, 3, checkpoint_dir=tmp_path)
        folder = next(tmp_path.iterdir())
        marker = dict(first[0], top=[[2, 9.0]])
        (folder / "rep_00000.json").write_text(__import__("json").dumps(marker))
        again = run_replicates(spec, 60, 10, 3, 0.1, FAST, 3, checkpoint_dir=tmp_path)
        assert again[0]["top"] == [[2, 9.0]]  # loaded, not rerun
        assert again[1]["top"] == first[1]["top"]
        assert len(again) == 3
