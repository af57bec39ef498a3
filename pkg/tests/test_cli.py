"""End-to-end tests of the command-line interface on the Gaussian toy case."""

import json
import os

import pytest

from src.artifact_store import ArtifactStore
from src.cli import main, summary_rows
from src.postrisk import threshold_key

TOY_CONFIG = {
    "name": "toy",
    "method": "postrisk",
    "seed": 3,
    "repetitions": 2,
    "n_particles": 30,
    "case": {"test_case": "gaussian_toy", "truth_seed": 8, "use_data": True},
    "proposal": {"kind": "pcn", "rho": 0.5},
    "posterior": {"mh_steps": 3, "cess_fraction": 0.8},
    "rare": {
        "direction": "geq",
        "target": 1.5,
        "thresholds_of_interest": [1.0, 1.5],
        "schedule": "adaptive",
        "gamma": 0.5,
        "mh_steps": 3,
        "step_control": "adapt",
    },
    "baseline": {"n_samples": 200, "n_chains": 2, "chain_length": 100},
}


def write_config(tmp_path, **overrides):
    data = {**TOY_CONFIG, **overrides}
    path = tmp_path / f"{data['name']}.json"
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture
def toy_run(tmp_path, run_dir):
    """Run the toy PostRisk config once and return its run directory."""
    assert main(["run", "--config", write_config(tmp_path), "--out", run_dir]) == 0
    return run_dir


class TestRun:

    def test_writes_artifacts(self, toy_run):
        for name in ("config.json", "truth.json", "report.json", "estimates.csv", "levels.csv",
                     "diagnostics.csv", "particles_final.csv"):
            assert os.path.isfile(os.path.join(toy_run, name)), name

    def test_report_contents(self, toy_run):
        store = ArtifactStore(toy_run)
        report = store.load_report()
        assert report["method"] == "postrisk"
        assert report["test_case"] == "gaussian_toy"
        assert report["desk_scale"] is False
        assert len(report["per_run"]) == 2
        assert set(report["summary"]) == {threshold_key(1.0), threshold_key(1.5)}
        assert len(store.read_csv("estimates.csv")) == 4
        assert store.read_fields("particles_final.csv").shape == (30, 1)

    def test_overrides(self, tmp_path, run_dir, capsys):
        config = write_config(tmp_path, method="mc-prior")
        assert main(["run", "--config", config, "--reps", "3", "--seed", "9", "--out", run_dir]) == 0
        report = ArtifactStore(run_dir).load_report()
        assert len(report["per_run"]) == 3
        assert report["config"]["seed"] == 9
        assert "mc-prior" in capsys.readouterr().out

    @pytest.mark.parametrize("method", ["smc-rare", "smc-posterior", "mh"])
    def test_other_methods(self, tmp_path, run_dir, method):
        config = write_config(tmp_path, method=method, repetitions=1)
        assert main(["run", "--config", config, "--out", run_dir]) == 0
        report = ArtifactStore(run_dir).load_report()
        assert report["method"] == method
        estimate = report["per_run"][0]["estimates_by_threshold"][threshold_key(1.5)]
        assert 0.0 <= estimate <= 1.0


class TestOtherCommands:

    def test_generate_truth(self, tmp_path, run_dir, capsys):
        assert main(["generate-truth", "--config", write_config(tmp_path), "--seed", "5",
                     "--out", run_dir]) == 0
        with open(os.path.join(run_dir, "truth.json")) as f:
            truth = json.load(f)
        assert truth["seed"] == 5
        assert truth["test_case"] == "gaussian_toy"
        assert "Saved to" in capsys.readouterr().out

    def test_summarize(self, toy_run, tmp_path, capsys):
        table = str(tmp_path / "table.csv")
        assert main(["summarize", toy_run, os.path.join(toy_run, "report.json"), "--out", table]) == 0
        out = capsys.readouterr().out
        assert out.count("postrisk") == 4
        assert os.path.isfile(table)

    def test_summary_rows_report_budgets(self, toy_run):
        rows = summary_rows(toy_run)
        assert {row["threshold"] for row in rows} == {threshold_key(1.0), threshold_key(1.5)}
        assert all(row["forward_evals"] > 0 and row["qoi_evals"] > 0 for row in rows)

    def test_plot(self, toy_run, capsys):
        assert main(["plot", toy_run]) == 0
        assert os.path.isfile(os.path.join(toy_run, "thresholds.svg"))
        assert os.path.isfile(os.path.join(toy_run, "estimates.svg"))


class TestExitCodes:

    def test_unknown_preset_is_an_error(self, capsys):
        assert main(["run", "--config", "no_such_preset"]) == 1
        assert "ConfigError" in capsys.readouterr().err

    def test_missing_report_is_an_error(self, tmp_path, capsys):
        assert main(["summarize", str(tmp_path / "missing" / "report.json")]) == 1
        assert "ArtifactError" in capsys.readouterr().err
        assert not (tmp_path / "missing").exists()

    def test_bad_schedule_leaves_no_run_dir(self, tmp_path, capsys):
        path = write_config(tmp_path, name="bad", rare={"direction": "geq", "target": 4.0,
                                                         "schedule": "list", "thresholds": [1, 2, 3]})
        out = tmp_path / "bad_run"
        assert main(["run", "--config", path, "--out", str(out)]) == 1
        assert "ConfigError" in capsys.readouterr().err
        assert not out.exists()

    def test_usage_errors(self):
        assert main([]) == 2
        assert main(["run"]) == 2
        assert main(["launch"]) == 2

    def test_help(self):
        assert main(["--help"]) == 0
