import csv
import json

import numpy as np
import pytest

from distcausal.cli import DataError, load_dataset, main
from distcausal.distspace import QuantileGrid
from distcausal.estimators import cross_fit
from distcausal.kernels import Bandwidth, Kernel
from distcausal.simlab import DGPConfig, oracle_nuisances

GRID = QuantileGrid()


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def fixture_files(tmp_path):
    units = tmp_path / "units.csv"
    obs = tmp_path / "observations.csv"
    write_csv(units, ["unit_id", "treatment", "x1", "x2"],
              [["u1", 0.5, 1.0, -1.0], ["u2", -0.2, 0.0, 2.0]])
    write_csv(obs, ["unit_id", "value"],
              [["u1", 1.0], ["u1", 3.0], ["u2", 5.0]])
    return units, obs


class TestLoadDataset:
    def test_two_unit_fixture(self, fixture_files):
        units, obs = fixture_files
        data = load_dataset(units, obs, GRID)
        assert data.n == 2 and data.d == 2
        u1 = data.units[0]
        assert u1.a == 0.5
        np.testing.assert_array_equal(u1.x, [1.0, -1.0])
        # inverted-CDF quantiles of {1, 3}: 1 below level 0.5, 3 above
        assert u1.yq.values[0] == 1.0
        assert u1.yq.values[-1] == 3.0

    def test_unknown_unit_names_line(self, fixture_files, tmp_path):
        units, _ = fixture_files
        bad = tmp_path / "bad.csv"
        write_csv(bad, ["unit_id", "value"], [["u1", 1.0], ["ghost", 2.0]])
        with pytest.raises(DataError, match=r"bad.csv:3.*'ghost'"):
            load_dataset(units, bad, GRID)

    def test_empty_observations(self, fixture_files, tmp_path):
        units, _ = fixture_files
        empty = tmp_path / "empty.csv"
        write_csv(empty, ["unit_id", "value"], [])
        with pytest.raises(DataError, match="zero observations"):
            load_dataset(units, empty, GRID)

    def test_non_numeric_field_names_line(self, fixture_files, tmp_path):
        _, obs = fixture_files
        bad = tmp_path / "badunits.csv"
        write_csv(bad, ["unit_id", "treatment", "x1", "x2"],
                  [["u1", "abc", 0.0, 0.0]])
        with pytest.raises(DataError, match="badunits.csv:2"):
            load_dataset(bad, obs, GRID)

    def test_missing_covariate_rejected(self, fixture_files, tmp_path):
        _, obs = fixture_files
        bad = tmp_path / "short.csv"
        with open(bad, "w") as fh:
            fh.write("unit_id,treatment,x1,x2\nu1,0.5,1.0\n")
        with pytest.raises(DataError, match="missing fields"):
            load_dataset(bad, obs, GRID)

    def test_bad_header(self, fixture_files, tmp_path):
        _, obs = fixture_files
        bad = tmp_path / "hdr.csv"
        write_csv(bad, ["id", "a", "x1"], [["u1", 0.0, 0.0]])
        with pytest.raises(DataError, match="header"):
            load_dataset(bad, obs, GRID)

    def test_missing_file(self, fixture_files, tmp_path):
        _, obs = fixture_files
        with pytest.raises(DataError, match="not found"):
            load_dataset(tmp_path / "nope.csv", obs, GRID)


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert main(["estimate", "--kernel", "nope"]) == 1

    def test_data_error_is_two(self, tmp_path, capsys):
        units = tmp_path / "units.csv"
        obs = tmp_path / "obs.csv"
        write_csv(units, ["unit_id", "treatment", "x1"], [["u1", 0.0, 0.0]])
        write_csv(obs, ["unit_id", "value"], [["u1", "abc"]])
        code = main([
            "estimate", "--units", str(units), "--observations", str(obs),
            "--bandwidth", "0.5", "--out", str(tmp_path),
        ])
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_missing_inputs_is_usage(self, capsys):
        assert main(["estimate", "--bandwidth", "0.5"]) == 1


class TestCommands:
    def test_simulate_writes_loadable_files(self, tmp_path):
        out = tmp_path / "sim"
        assert main([
            "simulate", "--n-units", "30", "--seed", "4", "--out", str(out),
        ]) == 0
        data = load_dataset(out / "units.csv", out / "observations.csv", GRID)
        assert data.n == 30 and data.d == 10
        doc = json.loads((out / "simulate.json").read_text())
        assert doc["config"]["seed"] == 4

    def test_estimate_matches_library_call(self, tmp_path):
        sim = tmp_path / "sim"
        main(["simulate", "--n-units", "100", "--seed", "5", "--out", str(sim)])
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dgp": {"seed": 5}}))
        out = tmp_path / "est"
        code = main([
            "estimate", "--config", str(cfg),
            "--units", str(sim / "units.csv"),
            "--observations", str(sim / "observations.csv"),
            "--bandwidth", "0.5", "--treatment-levels", "0.0",
            "--nuisance", "oracle", "--seed", "5", "--out", str(out),
        ])
        assert code == 0
        doc = json.loads((out / "estimate.json").read_text())
        data = load_dataset(sim / "units.csv", sim / "observations.csv", GRID)
        pair = oracle_nuisances(DGPConfig(seed=5), GRID)
        direct = cross_fit(
            data, lambda _d: pair, "dml", Kernel("epanechnikov"),
            Bandwidth(0.5), 0.0, folds=2, seed=5,
        )
        np.testing.assert_allclose(
            doc["estimates"]["0.0"]["dml"], direct.estimate.values, atol=1e-12
        )

    def test_estimate_json_csv_agree(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_units": 80, "seed": 1}))
        out = tmp_path / "est"
        assert main([
            "estimate", "--config", str(cfg), "--bandwidth", "0.4",
            "--treatment-levels", "0.0", "--nuisance", "oracle",
            "--out", str(out),
        ]) == 0
        doc = json.loads((out / "estimate.json").read_text())
        with open(out / "estimate.csv") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            if row["estimator"] != "dml":
                continue
            level_idx = doc["levels"].index(float(row["level"]))
            assert float(row["value"]) == pytest.approx(
                doc["estimates"]["0.0"]["dml"][level_idx], rel=1e-12
            )

    def test_band_outputs_ordered(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_units": 150, "seed": 2}))
        out = tmp_path / "band"
        assert main([
            "band", "--config", str(cfg), "--bandwidth", "0.4",
            "--treatment-levels", "0.0", "--nuisance", "oracle",
            "--alpha", "0.05", "--out", str(out),
        ]) == 0
        rep = json.loads((out / "band.json").read_text())["bands"]["0.0"]
        lower = np.array(rep["lower"])
        upper = np.array(rep["upper"])
        center = np.array(rep["theta"]) - np.array(rep["bias"]) * rep["h_star"] ** 2
        assert np.all(lower <= upper)
        assert np.all(lower <= center) and np.all(center <= upper)
        assert rep["alpha"] == 0.05
        assert rep["q_hat"] > 0.0

    def test_rerun_byte_identical(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_units": 60, "seed": 3}))
        out = tmp_path / "est"
        args = [
            "estimate", "--config", str(cfg), "--bandwidth", "0.4",
            "--treatment-levels", "0.0", "--nuisance", "oracle",
            "--out", str(out),
        ]
        assert main(args) == 0
        first = (out / "estimate.json").read_bytes()
        first_csv = (out / "estimate.csv").read_bytes()
        assert main(args) == 0
        assert (out / "estimate.json").read_bytes() == first
        assert (out / "estimate.csv").read_bytes() == first_csv

    def test_benchmark_command(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "n_units": 120, "seed": 6, "treatment_levels": "0.0",
            "dgp": {"seed": 6},
        }))
        out = tmp_path / "bm"
        assert main([
            "benchmark", "--config", str(cfg), "--replications", "1",
            "--nuisance", "oracle", "--out", str(out),
        ]) == 0
        doc = json.loads((out / "benchmark.json").read_text())
        assert doc["replications"] == 1
        assert {r["estimator"] for r in doc["rows"]} == {"dr", "ipw", "dml"}
