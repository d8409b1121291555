import json

import numpy as np
import pytest

from popfind import cli
from popfind.config import ConfigError, RunConfig
from popfind.data import TrialDataset, write_csv

CHAIN = ["--iterations", "60", "--burn-in", "30", "--thin", "3"]


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    rng = np.random.default_rng(0)
    n = 80
    X = rng.normal(size=(n, 3))
    z = np.arange(n) % 2
    y = 4.0 + 0.6 * z * (X[:, 0] > 0) + rng.normal(0, 0.7, n)
    gamma = (rng.random(n) > 0.15).astype(int)
    d = TrialDataset(z=z, X=X, y_obs_log=y, gamma=gamma, y_tox=(rng.random(n) < 0.2).astype(int),
                     covariate_names=("age", "bmi", "score"))
    path = tmp_path_factory.mktemp("data") / "trial.csv"
    write_csv(d, path)
    return path


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig(data="x.csv", tau_sensitivity=[60.0])
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"bogus": 1})

    def test_validation(self):
        with pytest.raises(ConfigError):
            RunConfig(data="x", tau=-1).validate()
        with pytest.raises(ConfigError):
            RunConfig(mode="simulate").validate()

    def test_taus_deduplicated(self):
        assert RunConfig(tau=90, tau_sensitivity=[60, 90, 120]).taus == [90, 60, 120]


class TestAnalyze:
    def test_reports_per_tau(self, csv_path, tmp_path):
        out = tmp_path / "o"
        rc = cli.main(["analyze", "--data", str(csv_path), "--out", str(out), "--tau", "90", "60", "120", *CHAIN])
        assert rc == 0
        reports = sorted(p.name for p in out.glob("report_tau*.json"))
        assert reports == ["report_tau120.json", "report_tau60.json", "report_tau90.json"]
        seeds = {json.loads((out / r).read_text())["seed"] for r in reports}
        assert seeds == {0}
        assert (out / "bins.json").exists() and (out / "diagnostics.json").exists()
        body = json.loads((out / "report_tau90.json").read_text())
        assert sum(r["top"] for r in body["report"]["actions"]) == 5

    def test_rerun_from_emitted_config_is_bit_exact(self, csv_path, tmp_path):
        a = tmp_path / "a"
        assert cli.main(["analyze", "--data", str(csv_path), "--out", str(a), "--seed", "7", *CHAIN]) == 0
        b = tmp_path / "b"
        assert cli.main(["analyze", "--config", str(a / "report_tau90.json"), "--out", str(b)]) == 0
        ra = json.loads((a / "report_tau90.json").read_text())["report"]
        rb = json.loads((b / "report_tau90.json").read_text())["report"]
        assert ra == rb

    def test_tradeoff_uses_toxicity(self, csv_path, tmp_path):
        out = tmp_path / "t"
        assert cli.main(["analyze", "--data", str(csv_path), "--out", str(out), "--delta1", "1.5", *CHAIN]) == 0
        body = json.loads((out / "report_tau90.json").read_text())
        assert body["diagnostics"]["tox"] is not None
        assert any(r["pate_tox"] is not None for r in body["report"]["actions"])


class TestExitCodes:
    def test_missing_file_is_schema_error(self, tmp_path):
        assert cli.main(["analyze", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2

    def test_missing_tox_column(self, csv_path, tmp_path):
        text = csv_path.read_text().splitlines()
        head = text[0].split(",")
        k = head.index("tox")
        rows = [",".join(c for j, c in enumerate(line.split(",")) if j != k) for line in text]
        p = tmp_path / "notox.csv"
        p.write_text("\n".join(rows) + "\n")
        assert cli.main(["analyze", "--data", str(p), "--out", str(tmp_path), "--delta1", "1.5", *CHAIN]) == 2

    def test_config_errors(self, tmp_path):
        assert cli.main(["simulate", "--scenario", "E99", "--out", str(tmp_path)]) == 3
        assert cli.main(["analyze", "--out", str(tmp_path)]) == 3
        bad = tmp_path / "bad.json"
        bad.write_text('{"nope": 1}')
        assert cli.main(["analyze", "--config", str(bad)]) == 3

    def test_numerical_failure(self, csv_path, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise FloatingPointError("overflow")

        monkeypatch.setattr(cli, "run_chain", boom)
        assert cli.main(["analyze", "--data", str(csv_path), "--out", str(tmp_path), *CHAIN]) == 4


class TestSimulateAndTune:
    def test_simulate_single_replicate(self, tmp_path):
        rc = cli.main(["simulate", "--scenario", "E2", "--reps", "1", "--n", "60", "--out", str(tmp_path),
                       "--iterations", "30", "--burn-in", "10", "--thin", "2"])
        assert rc == 0
        lines = (tmp_path / "simulate.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[0].startswith("scenario,")
        assert len((tmp_path / "replicates.jsonl").read_text().splitlines()) == 1

    def test_tune_small(self, tmp_path):
        rc = cli.main(["tune", "--reps", "2", "--n", "60", "--target-t1e", "0.5", "--out", str(tmp_path),
                       "--iterations", "30", "--burn-in", "10", "--thin", "2"])
        assert rc == 0
        res = json.loads((tmp_path / "tune.json").read_text())
        assert res["reps"] == 2 and isinstance(res["u0"], float)

    def test_tune_needs_enough_reps(self, tmp_path):
        rc = cli.main(["tune", "--reps", "2", "--n", "60", "--out", str(tmp_path),
                       "--iterations", "30", "--burn-in", "10", "--thin", "2"])
        assert rc == 3
