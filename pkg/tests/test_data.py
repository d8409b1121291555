import numpy as np
import pytest

from popfind.data import (CompleteData, PosteriorDraws, SchemaError, TrialDataset, complete_data,
                          load_dataset, read_csv, write_csv)


def _rows(n=6):
    rng = np.random.default_rng(0)
    return [
        {"arm": str(i % 2), "time": repr(float(rng.exponential(30)) + 0.1), "event": str(int(i % 3 != 0)),
         "age": repr(float(rng.normal(60, 5))), "stage": ["I", "II", "III"][i % 3]}
        for i in range(n)
    ]


class TestTrialDataset:
    def test_log_times_and_flags(self):
        d = load_dataset(_rows())
        assert d.n == 6 and d.p == 2
        np.testing.assert_array_equal(d.y_obs_log, np.log(d.time))
        np.testing.assert_array_equal(d.censored, [0, 3])

    def test_arrays_are_frozen(self):
        d = load_dataset(_rows())
        with pytest.raises(ValueError):
            d.z[0] = 1

    def test_bad_arm_value(self):
        with pytest.raises(SchemaError):
            TrialDataset(z=[0, 2], X=[[1.0], [2.0]], y_obs_log=[0.0, 1.0], gamma=[1, 1])

    def test_length_mismatch(self):
        with pytest.raises(SchemaError):
            TrialDataset(z=[0, 1], X=[[1.0]], y_obs_log=[0.0, 1.0], gamma=[1, 1])

    def test_arm_swap(self):
        d = load_dataset(_rows())
        np.testing.assert_array_equal(d.with_arms_swapped().z, 1 - d.z)

    def test_permutation(self):
        d = load_dataset(_rows())
        order = np.arange(d.n)[::-1]
        e = d.permuted(order)
        np.testing.assert_array_equal(e.time, d.time[order])
        np.testing.assert_array_equal(e.X, d.X[order])


class TestLoadDataset:
    def test_missing_required_column(self):
        rows = [{k: v for k, v in r.items() if k != "event"} for r in _rows()]
        with pytest.raises(SchemaError, match="event"):
            load_dataset(rows)

    def test_nonpositive_time(self):
        rows = _rows()
        rows[2]["time"] = "0"
        with pytest.raises(SchemaError, match="row 3"):
            load_dataset(rows)

    def test_missing_covariates_listed(self):
        rows = _rows()
        rows[1]["age"] = ""
        rows[4]["stage"] = "NA"
        with pytest.raises(SchemaError) as exc:
            load_dataset(rows)
        assert "row 2: age" in str(exc.value) and "row 5: stage" in str(exc.value)

    def test_categorical_codes_sorted(self):
        d = load_dataset(_rows())
        assert d.levels["stage"] == ("I", "II", "III")
        np.testing.assert_array_equal(d.X[:3, 1], [0, 1, 2])

    def test_schema_mapping(self):
        rows = [{"trt": r["arm"], "days": r["time"], "status": r["event"], "age": r["age"]} for r in _rows()]
        d = load_dataset(rows, schema={"arm": "trt", "time": "days", "event": "status"})
        assert d.covariate_names == ("age",)

    def test_csv_round_trip_is_bit_exact(self, tmp_path):
        rows = _rows(20)
        for i, r in enumerate(rows):
            r["tox"] = str(i % 2)
        d = load_dataset(rows)
        write_csv(d, tmp_path / "d.csv")
        e = read_csv(tmp_path / "d.csv")
        for f in ("z", "X", "y_obs_log", "gamma", "y_tox", "time"):
            np.testing.assert_array_equal(getattr(e, f), getattr(d, f))
        assert e.levels == d.levels


class TestCompleteData:
    def test_fill_censored(self):
        d = load_dataset(_rows())
        c = complete_data(d, {0: 0.5, 3: 1.0})
        assert isinstance(c, CompleteData)
        assert c.y_log[0] == d.y_obs_log[0] + 0.5
        np.testing.assert_array_equal(c.y_log[d.gamma == 1], d.y_obs_log[d.gamma == 1])

    def test_kappa_for_uncensored_rejected(self):
        d = load_dataset(_rows())
        with pytest.raises(ValueError):
            complete_data(d, {1: 0.2})

    def test_negative_kappa_rejected(self):
        d = load_dataset(_rows())
        with pytest.raises(ValueError):
            complete_data(d, {0: -0.1})


class TestPosteriorDraws:
    def test_sigma2_positive(self):
        with pytest.raises(ValueError):
            PosteriorDraws(mean0=np.zeros((2, 3)), mean1=np.zeros((2, 3)), sigma2=np.array([1.0, 0.0]),
                           residuals=None, burn_in=0, thin=1, seed=0)
