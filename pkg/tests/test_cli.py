"""End-to-end command line checks: exit codes, file outputs, determinism."""

import json

import numpy as np
import pytest

from multirobust.cli import main

CBRT_012 = 0.49324241486609404  # cbrt(0.5 * 0.6 * 0.4), frozen


def write_lines(path, header, rows):
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def toy_dataset_csv(path):
    write_lines(path, "y,a,w_1", [
        (1.0, 1, 0.1), (3.0, 1, -0.2), (2.0, 0, 0.3), (4.0, 0, 0.0),
    ])


def write_config(path, cfg):
    path.write_text(json.dumps(cfg), encoding="utf-8")


def run_cli(*argv):
    return main(list(argv))


class TestEstimate:
    def test_explicit_empty_pool(self, tmp_path, capsys):
        toy_dataset_csv(tmp_path / "d.csv")
        write_config(tmp_path / "c.json", {"dataset": "d.csv", "predictions": "none"})
        assert run_cli("estimate", "--config", str(tmp_path / "c.json")) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["schema_version"] == "1"
        mr = report["estimates"][0]
        assert mr["method"] == "MR"
        assert mr["beta"] == pytest.approx(-1.0, abs=1e-12)
        assert report["pool"] == {"n_ps": 0, "n_outcome": 0, "labels": []}

    def test_missing_prediction_source_is_usage_error(self, tmp_path, capsys):
        toy_dataset_csv(tmp_path / "d.csv")
        write_config(tmp_path / "c.json", {"dataset": "d.csv"})
        assert run_cli("estimate", "--config", str(tmp_path / "c.json")) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "InvalidInput"
        assert err["exit_code"] == 2

    def test_infeasible_calibration_exit_and_diagnostics(self, tmp_path, capsys):
        # Treated propensities all sit above the full-sample mean, so the
        # treated-side constraint cannot be balanced by any weighting.
        write_lines(tmp_path / "d.csv", "y,a,w_1", [
            (1.0, 1, 0.0), (2.0, 1, 0.0), (3.0, 1, 0.0),
            (4.0, 0, 0.0), (5.0, 0, 0.0), (6.0, 0, 0.0),
        ])
        write_lines(tmp_path / "p.csv", "ps_1", [
            (0.8,), (0.9,), (0.85,), (0.2,), (0.1,), (0.15,),
        ])
        write_config(tmp_path / "c.json", {"dataset": "d.csv", "predictions": "p.csv"})
        assert run_cli("estimate", "--config", str(tmp_path / "c.json")) == 7
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "NonConvergence"
        assert err["diagnostics"]["residual"] > 1e-8
        assert err["diagnostics"]["iterations"] > 0

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        rng = np.random.default_rng(50)
        rows = [(float(y), int(a), float(w)) for y, a, w in zip(
            rng.normal(size=30), rng.integers(0, 2, size=30), rng.normal(size=30))]
        rows[0] = (rows[0][0], 1, rows[0][2])
        rows[1] = (rows[1][0], 0, rows[1][2])
        write_lines(tmp_path / "d.csv", "y,a,w_1", rows)
        write_config(tmp_path / "c.json", {
            "dataset": "d.csv",
            "learners": [
                {"kind": "logistic"},
                {"kind": "mlp", "hidden_layers": [3], "epochs": 5},
            ],
        })
        assert run_cli("estimate", "--config", str(tmp_path / "c.json"),
                       "--out", str(tmp_path / "r1.json")) == 0
        assert run_cli("estimate", "--config", str(tmp_path / "c.json"),
                       "--out", str(tmp_path / "r2.json")) == 0
        assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()

    def test_csv_format_matches_json(self, tmp_path, capsys):
        toy_dataset_csv(tmp_path / "d.csv")
        write_config(tmp_path / "c.json", {"dataset": "d.csv", "predictions": "none"})
        assert run_cli("estimate", "--config", str(tmp_path / "c.json"),
                       "--format", "csv") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "method,beta,beta1,beta0,se,ci_low,ci_high"
        fields = lines[1].split(",")
        assert fields[0] == "MR"
        assert float(fields[1]) == pytest.approx(-1.0, abs=1e-12)

    def test_exported_pool_reimports_identically(self, tmp_path, capsys):
        rng = np.random.default_rng(51)
        rows = [(float(y), int(a), float(w)) for y, a, w in zip(
            rng.normal(size=40), rng.integers(0, 2, size=40), rng.normal(size=40))]
        rows[0] = (rows[0][0], 1, rows[0][2])
        rows[1] = (rows[1][0], 0, rows[1][2])
        write_lines(tmp_path / "d.csv", "y,a,w_1", rows)
        write_config(tmp_path / "fit.json", {
            "dataset": "d.csv",
            "learners": [{"kind": "logistic"}, {"kind": "ridge", "ridge_lambda": 0.1}],
            "export_predictions": "pool.csv",
        })
        assert run_cli("estimate", "--config", str(tmp_path / "fit.json")) == 0
        beta_fit = json.loads(capsys.readouterr().out)["estimates"][0]["beta"]
        write_config(tmp_path / "reuse.json", {"dataset": "d.csv", "predictions": "pool.csv"})
        assert run_cli("estimate", "--config", str(tmp_path / "reuse.json")) == 0
        beta_reuse = json.loads(capsys.readouterr().out)["estimates"][0]["beta"]
        assert beta_reuse == pytest.approx(beta_fit, rel=1e-12)

    def test_comparisons_and_general_ee_blocks(self, tmp_path, capsys):
        rng = np.random.default_rng(52)
        rows = [(float(y), int(a), float(w)) for y, a, w in zip(
            rng.normal(size=40), rng.integers(0, 2, size=40), rng.normal(size=40))]
        rows[0] = (rows[0][0], 1, rows[0][2])
        rows[1] = (rows[1][0], 0, rows[1][2])
        write_lines(tmp_path / "d.csv", "y,a,w_1", rows)
        write_config(tmp_path / "c.json", {
            "dataset": "d.csv",
            "learners": [{"kind": "logistic"}, {"kind": "ridge", "ridge_lambda": 0.1}],
            "general_ee": {"eta0": 0.0, "eta1": 0.0},
            "comparisons": ["AIPW", "nIPW"],
        })
        assert run_cli("estimate", "--config", str(tmp_path / "c.json")) == 0
        report = json.loads(capsys.readouterr().out)
        methods = [e["method"] for e in report["estimates"]]
        assert methods == ["MR", "GeneralEE", "AIPW", "nIPW"]
        assert report["estimates"][1]["beta"] == report["estimates"][0]["beta"]

    def test_unknown_comparison_rejected(self, tmp_path, capsys):
        toy_dataset_csv(tmp_path / "d.csv")
        write_config(tmp_path / "c.json", {
            "dataset": "d.csv", "predictions": "none", "comparisons": ["TMLE"],
        })
        assert run_cli("estimate", "--config", str(tmp_path / "c.json")) == 2
        capsys.readouterr()

    def test_bad_config_json(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text("{not json", encoding="utf-8")
        assert run_cli("estimate", "--config", str(tmp_path / "c.json")) == 2
        capsys.readouterr()


class TestSimulate:
    def scenario_config(self, out_name="report"):
        return {
            "scenario": {"n": 60, "p": 8, "reps": 4, "seed": 3,
                         "coef_ranges": [0.0, 0.0, 0.0, 0.0]},
            "arms": [
                {"name": "dm", "estimator": "diff_means"},
                {"name": "mr", "estimator": "mr", "pool_mode": "oracle_only"},
            ],
        }

    def test_writes_all_three_files(self, tmp_path):
        write_config(tmp_path / "c.json", self.scenario_config())
        out = tmp_path / "report"
        assert run_cli("simulate", "--config", str(tmp_path / "c.json"),
                       "--out", str(out)) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["command"] == "simulate"
        assert {a["name"] for a in summary["results"][0]["arms"]} == {"dm", "mr"}
        rep_lines = (out / "replications.csv").read_text().strip().splitlines()
        assert rep_lines[0] == "rep,estimator,beta_hat,se,covered"
        assert len(rep_lines) == 1 + 4 * 2
        series = (out / "series.csv").read_text().strip().splitlines()
        assert series[0] == "estimator,n,bias,mc_sd,rmse,mean_se,coverage"
        assert len(series) == 3

    def test_outputs_are_deterministic(self, tmp_path):
        write_config(tmp_path / "c.json", self.scenario_config())
        for d in ("r1", "r2"):
            assert run_cli("simulate", "--config", str(tmp_path / "c.json"),
                           "--out", str(tmp_path / d), "--threads", "3") == 0
        for name in ("summary.json", "replications.csv", "series.csv"):
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()

    def test_n_grid_sweep(self, tmp_path):
        cfg = self.scenario_config()
        cfg["n_grid"] = [50, 80]
        write_config(tmp_path / "c.json", cfg)
        out = tmp_path / "sweep"
        assert run_cli("simulate", "--config", str(tmp_path / "c.json"),
                       "--out", str(out)) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert [r["n"] for r in summary["results"]] == [50, 80]
        series = (out / "series.csv").read_text().strip().splitlines()[1:]
        assert {line.split(",")[1] for line in series} == {"50", "80"}

    def test_seed_override_changes_results(self, tmp_path):
        write_config(tmp_path / "c.json", self.scenario_config())
        assert run_cli("simulate", "--config", str(tmp_path / "c.json"),
                       "--out", str(tmp_path / "a"), "--seed", "99") == 0
        assert run_cli("simulate", "--config", str(tmp_path / "c.json"),
                       "--out", str(tmp_path / "b")) == 0
        sa = json.loads((tmp_path / "a" / "summary.json").read_text())
        sb = json.loads((tmp_path / "b" / "summary.json").read_text())
        assert sa["scenario"]["seed"] == 99
        assert sb["scenario"]["seed"] == 3
        assert sa["results"] != sb["results"]

    def test_config_without_scenario(self, tmp_path, capsys):
        write_config(tmp_path / "c.json", {"arms": []})
        assert run_cli("simulate", "--config", str(tmp_path / "c.json")) == 2
        capsys.readouterr()


class TestMetrics:
    def test_treatment_only(self, tmp_path, capsys):
        write_lines(tmp_path / "t.csv", "score,label", [
            (0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0),
        ])
        write_config(tmp_path / "c.json", {"treatment": "t.csv"})
        assert run_cli("metrics", "--config", str(tmp_path / "c.json")) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["auc"] == 1.0
        assert report["d"] == 1.0
        assert "r2" not in report and "geo" not in report

    def test_combined_reference_value(self, tmp_path, capsys):
        # One positive beating four of five negatives: auc = 0.8 exactly.
        write_lines(tmp_path / "t.csv", "score,label", [
            (0.8, 1), (0.1, 0), (0.2, 0), (0.3, 0), (0.4, 0), (0.9, 0),
        ])
        # SSE 1 against SST 2: r2 = 0.5 exactly.
        write_lines(tmp_path / "o.csv", "pred,target", [(1.0, 0.0), (2.0, 2.0)])
        write_config(tmp_path / "c.json", {"treatment": "t.csv", "outcome": "o.csv"})
        assert run_cli("metrics", "--config", str(tmp_path / "c.json")) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["auc"] == pytest.approx(0.8, abs=1e-12)
        assert report["r2"] == pytest.approx(0.5, abs=1e-12)
        assert report["geo"] == pytest.approx(CBRT_012, abs=1e-6)

    def test_one_class_exit_code(self, tmp_path, capsys):
        write_lines(tmp_path / "t.csv", "score,label", [(0.9, 1), (0.8, 1)])
        write_config(tmp_path / "c.json", {"treatment": "t.csv"})
        assert run_cli("metrics", "--config", str(tmp_path / "c.json")) == 11
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "OneClassOnly"

    def test_needs_at_least_one_input(self, tmp_path, capsys):
        write_config(tmp_path / "c.json", {})
        assert run_cli("metrics", "--config", str(tmp_path / "c.json")) == 2
        capsys.readouterr()
